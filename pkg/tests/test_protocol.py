import io
import json
import threading
from dataclasses import replace

import pytest

from xomoracle.device import ResponseKind
from xomoracle.device.protocol import (
    ProtocolError, Session, WireClient, make_tcp_server, response_from_json, response_to_json,
    serve_stream, state_from_json, state_to_json,
)
from xomoracle.recovery import SINGLE_STEP, Solver
from xomoracle.recovery.solver import known_flash

from conftest import planted


@pytest.fixture
def add_state():
    dev, addr, _ = planted("stm32l0-like", "adds r0, #0x1f")
    return dev, replace(dev.blank_state(), regs=(0x23,) + (0,) * 12, pc=addr, sp=0x2000_0100)


@pytest.fixture
def server(add_state):
    dev, _ = add_state
    srv = make_tcp_server(dev, "127.0.0.1", 0)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield srv.server_address
    srv.shutdown()
    srv.server_close()


def test_state_json_round_trip(add_state):
    _, s = add_state
    d = state_to_json(s)
    assert json.loads(json.dumps(d)) == d
    assert state_from_json(d) == s


def test_add_step_over_the_wire(server, add_state):
    _, s = add_state
    client = WireClient(*server)
    try:
        client.apply_state(s)
        r = client.single_step(0x806)
        assert r.kind is ResponseKind.STEPPED
        assert r.state.regs[0] == 0x42 and r.state.pc == 0x808
    finally:
        client.close()


def test_errors_keep_the_session_alive(server, add_state):
    _, s = add_state
    client = WireClient(*server)
    try:
        bad = client.send_raw("{not json")
        assert not bad["ok"] and bad["error"]["type"] == "MalformedJSON"
        unknown = client.send_raw(json.dumps({"id": 7, "cmd": "erase_flash"}))
        assert not unknown["ok"] and unknown["id"] == 7
        assert unknown["error"]["type"] == "ProtocolError"
        missing = client.send_raw(json.dumps({"id": 8, "cmd": "single_step"}))
        assert missing["error"]["type"] == "MissingField"
        client.apply_state(s)
        assert client.single_step(0x806).state.regs[0] == 0x42
        with pytest.raises(ProtocolError):
            client._result(client.request("erase_flash"))
    finally:
        client.close()


def test_debug_read_errors_are_typed(server):
    client = WireClient(*server)
    try:
        reply = client.send_raw(json.dumps({"id": 1, "cmd": "debug_read", "addr": "0x804", "len": 4}))
        assert reply["error"]["type"] == "ReadBlocked"
        assert client.debug_read(0x100, 4) == bytes.fromhex(
            client.request("debug_read", addr="0x100", len=4)["result"])
    finally:
        client.close()


def test_stream_server_replies_line_by_line(add_state):
    dev, s = add_state
    lines = [json.dumps({"id": 1, "cmd": "apply_state", "state": state_to_json(s)}),
             "", "[1, 2]",
             json.dumps({"id": 2, "cmd": "run_until_interrupt", "entry": "0x806", "tick": 1})]
    out = io.StringIO()
    serve_stream(dev, io.StringIO("\n".join(lines) + "\n"), out)
    replies = [json.loads(x) for x in out.getvalue().splitlines()]
    assert [r["ok"] for r in replies] == [True, False, True]
    r = response_from_json(replies[2]["result"])
    assert r.kind is ResponseKind.INTERRUPT_TAKEN and r.state.regs[0] == 0x42


def test_response_json_round_trip(add_state):
    dev, s = add_state
    dev.apply_state(s)
    r = dev.single_step(0x806)
    assert response_from_json(json.loads(json.dumps(response_to_json(r)))) == r


def test_recovery_through_the_wire(server, add_state):
    dev, _ = add_state
    client = WireClient(*server)
    try:
        solver = Solver(client, SINGLE_STEP, memory_map=dev.memory_map,
                        flash=known_flash(dev.memory_map, dev.readable_flash()))
        assert solver.recover(0x806).text == "adds r0, #31"
    finally:
        client.close()


def test_session_direct():
    dev, _, _ = planted("stm32l0-like", "nop")
    session = Session(dev)
    reply = json.loads(session.handle_line('{"id": 3, "cmd": "read_state"}'))
    assert reply["ok"] and state_from_json(reply["result"]) == dev.state
