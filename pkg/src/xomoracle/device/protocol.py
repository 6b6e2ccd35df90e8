"""Newline-delimited JSON oracle protocol.

Each request is one JSON object per line::

    {"id": 1, "cmd": "apply_state", "state": {...}}
    {"id": 2, "cmd": "single_step", "addr": "0x806"}
    {"id": 3, "cmd": "run_until_interrupt", "entry": "0x806", "tick": 2, "guard": 64}
    {"id": 4, "cmd": "debug_read", "addr": "0x20000000", "len": 16}

and each reply is ``{"id": ..., "ok": true, "result": ...}`` or
``{"id": ..., "ok": false, "error": {"type": ..., "message": ...}}``.
Numbers in states are hex strings and SRAM is a hex byte string, so a
hardware bridge can speak the same protocol.
"""

from __future__ import annotations

import json
import socket
import socketserver
import sys

from ..isa.machine import FaultRecord, SystemState
from .model import DeviceError, DeviceModel, OracleResponse, ResponseKind

_STATE_INTS = ("sp", "lr", "pc", "apsr", "sram_base", "epsr_t", "primask",
               "control", "sp_alt", "ipsr")


def state_to_json(s: SystemState) -> dict:
    out = {"regs": [f"0x{r:08x}" for r in s.regs]}
    for name in _STATE_INTS:
        out[name] = f"0x{getattr(s, name):x}"
    out["sram"] = s.sram.hex()
    return out


def _int(v) -> int:
    return int(v, 0) if isinstance(v, str) else int(v)


def state_from_json(d: dict) -> SystemState:
    regs = tuple(_int(r) for r in d["regs"])
    kw = {name: _int(d[name]) for name in _STATE_INTS if name in d}
    return SystemState(regs=regs, sram=bytes.fromhex(d.get("sram", "")), **kw)


def response_to_json(r: OracleResponse) -> dict:
    out = {"kind": r.kind.value, "cycles": r.cycles, "retired": r.retired,
           "exception": r.exception}
    out["state"] = state_to_json(r.state) if r.state is not None else None
    out["fault"] = ({"address": f"0x{r.fault.address:08x}", "access": r.fault.access}
                    if r.fault else None)
    return out


def response_from_json(d: dict) -> OracleResponse:
    fault = d.get("fault")
    return OracleResponse(
        ResponseKind(d["kind"]),
        state_from_json(d["state"]) if d.get("state") else None,
        FaultRecord(_int(fault["address"]), fault["access"]) if fault else None,
        d.get("exception"), d.get("cycles", 0), d.get("retired", 0))


class ProtocolError(Exception):
    pass


class Session:
    """Stateful request handler bound to one device."""

    def __init__(self, dev: DeviceModel):
        self.dev = dev

    def handle(self, req: dict):
        cmd = req.get("cmd")
        dev = self.dev
        if cmd == "apply_state":
            dev.apply_state(state_from_json(req["state"]))
            return None
        if cmd == "single_step":
            return response_to_json(dev.single_step(_int(req["addr"])))
        if cmd == "run_until_interrupt":
            kwargs = {"guard": _int(req["guard"])} if "guard" in req else {}
            return response_to_json(dev.run_until_interrupt(_int(req["entry"]), _int(req["tick"]), **kwargs))
        if cmd == "debug_read":
            return dev.debug_read(_int(req["addr"]), _int(req["len"])).hex()
        if cmd == "read_state":
            return state_to_json(dev.state)
        raise ProtocolError(f"unknown command {cmd!r}")

    def handle_line(self, line: str) -> str:
        rid = None
        try:
            req = json.loads(line)
            if not isinstance(req, dict):
                raise ProtocolError("request must be a JSON object")
            rid = req.get("id")
            result = self.handle(req)
            reply = {"id": rid, "ok": True, "result": result}
        except json.JSONDecodeError as exc:
            reply = {"id": rid, "ok": False, "error": {"type": "MalformedJSON", "message": str(exc)}}
        except (ProtocolError, DeviceError, KeyError, ValueError, TypeError) as exc:
            kind = type(exc).__name__ if not isinstance(exc, KeyError) else "MissingField"
            reply = {"id": rid, "ok": False, "error": {"type": kind, "message": str(exc)}}
        return json.dumps(reply, separators=(",", ":"))


def serve_stream(dev: DeviceModel, rfile, wfile) -> None:
    session = Session(dev)
    for raw in rfile:
        line = raw.decode() if isinstance(raw, bytes) else raw
        if not line.strip():
            continue
        out = session.handle_line(line) + "\n"
        wfile.write(out.encode() if isinstance(raw, bytes) else out)
        wfile.flush()


def serve_stdio(dev: DeviceModel) -> None:
    serve_stream(dev, sys.stdin, sys.stdout)


def make_tcp_server(dev: DeviceModel, host: str, port: int) -> socketserver.TCPServer:
    """One session at a time; the device is shared across sessions."""

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            serve_stream(dev, self.rfile, self.wfile)

    class Server(socketserver.TCPServer):
        allow_reuse_address = True

    return Server((host, port), Handler)


class WireClient:
    """Minimal client: the device-side calls, forwarded over a socket."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.rfile = self.sock.makefile("rb")
        self._id = 0

    def request(self, cmd: str, **fields) -> dict:
        self._id += 1
        msg = {"id": self._id, "cmd": cmd, **fields}
        self.sock.sendall((json.dumps(msg) + "\n").encode())
        return json.loads(self.rfile.readline())

    def send_raw(self, line: str) -> dict:
        self.sock.sendall(line.encode() + b"\n")
        return json.loads(self.rfile.readline())

    def _result(self, reply):
        if not reply["ok"]:
            raise ProtocolError(f"{reply['error']['type']}: {reply['error']['message']}")
        return reply["result"]

    def apply_state(self, s: SystemState) -> None:
        self._result(self.request("apply_state", state=state_to_json(s)))

    def single_step(self, addr: int) -> OracleResponse:
        return response_from_json(self._result(self.request("single_step", addr=hex(addr))))

    def run_until_interrupt(self, entry: int, tick: int, guard: int = 4096) -> OracleResponse:
        return response_from_json(self._result(
            self.request("run_until_interrupt", entry=hex(entry), tick=tick, guard=guard)))

    def debug_read(self, addr: int, length: int) -> bytes:
        return bytes.fromhex(self._result(self.request("debug_read", addr=hex(addr), len=length)))

    def close(self):
        self.rfile.close()
        self.sock.close()
