import json
import random
import socket
import subprocess
import sys
from dataclasses import replace

import pytest

from xomoracle import cli
from xomoracle.device import MSP432_DEFAULT_KEY, load_preset
from xomoracle.device.protocol import WireClient
from xomoracle.isa import encode, parse_instruction

from conftest import demo_source


def write_config(tmp_path, preset, image: bytes, xom, name="dev.json", **extra):
    (tmp_path / "fw.bin").write_bytes(image)
    cfg = {"preset": preset, "flash_image_path": "fw.bin",
           "xom_ranges": [[hex(lo), hex(hi)] for lo, hi in xom], **extra}
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def firmware(tmp_path, preset, src, secret=b"", base=0):
    srcfile = tmp_path / "fw.s"
    srcfile.write_text(src)
    out = tmp_path / "code.bin"
    assert cli.main(["assemble", str(srcfile), "--out", str(out), "--base", hex(base + 0x800),
                     "--image-base", hex(base)]) == 0
    code = out.read_bytes()
    end = base + len(code)
    image = code + secret
    return write_config(tmp_path, preset, image, [(base + 0x800, base + len(image))]), end


def test_assemble_pads_and_places(tmp_path):
    src = tmp_path / "a.s"
    src.write_text("adds r0, #1\n bx lr\n")
    out = tmp_path / "a.bin"
    assert cli.main(["assemble", str(src), "--out", str(out), "--base", "0x10", "--pad-to", "0x40"]) == 0
    data = out.read_bytes()
    assert len(data) == 0x40 and data[0x10:0x14] == bytes.fromhex("01307047")
    bad = tmp_path / "b.s"
    bad.write_text("frobnicate r0\n")
    assert cli.main(["assemble", str(bad), "--out", str(out)]) == cli.EXIT_CONFIG


def test_recover_demo_listing_and_report(tmp_path, capsys):
    cfg, end = firmware(tmp_path, "stm32l0-like", demo_source("convolution.s"))
    out, report, source = tmp_path / "l.json", tmp_path / "r.json", tmp_path / "r.s"
    rc = cli.main(["recover", cfg, "--range", f"0x800:{end:#x}", "--out", str(out),
                   "--report", str(report), "--source", str(source)])
    assert rc == cli.EXIT_OK
    listing = json.loads(out.read_text())
    rep = json.loads(report.read_text())
    assert rep["instructions"] == len(listing["entries"])
    assert sum(rep["classes"].values()) == rep["instructions"]
    assert rep["total_queries"] == sum(e["queries"] for e in listing["entries"])
    assert rep["strategy"] == "single-step" and rep["device"] == "stm32l0-like"
    assert "push" in source.read_text()


def test_recover_is_deterministic(tmp_path):
    cfg, end = firmware(tmp_path, "stm32l0-like", "adds r0, r1, r2\n ldr r3, [r0, #4]\n bx lr\n")
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    for p in (a, b):
        assert cli.main(["recover", cfg, "--range", f"0x800:{end:#x}", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_strategies_agree_through_the_cli(tmp_path):
    src = "adds r0, r1, r2\n ldr r3, [r0, #4]\n lsls r1, r3, #3\n bx lr\n"
    l0, end = firmware(tmp_path, "stm32l0-like", src)
    f7 = tmp_path / "f7"
    f7.mkdir()
    f7cfg, f7end = firmware(f7, "stm32f7-like", src, base=0x0800_0000)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.main(["recover", l0, "--range", f"0x800:{end:#x}", "--out", str(a)]) == 0
    assert cli.main(["recover", f7cfg, "--range", f"0x08000800:{f7end:#x}", "--out", str(b),
                     "--strategy", "interrupt-driven"]) == 0
    ta = [e["text"] for e in json.loads(a.read_text())["entries"]]
    tb = [e["text"] for e in json.loads(b.read_text())["entries"]]
    assert ta == tb


def test_single_step_on_f7_is_oracle_unavailable(tmp_path):
    cfg, end = firmware(tmp_path, "stm32f7-like", "nop\n", base=0x0800_0000)
    assert cli.main(["recover", cfg, "--range", "0x08000800+2", "--strategy", "single-step"]) == \
        cli.EXIT_ORACLE_UNAVAILABLE


def test_extract_m4(tmp_path):
    secret = random.Random(4).randbytes(512)
    src = "ldr r2, [r3]\n mov r1, r0\n ldr r0, [r1]\n bx lr\n .align 4\n"
    cfg, end = firmware(tmp_path, "kinetis-m4-like", src, secret)
    out = tmp_path / "dump.bin"
    assert cli.main(["extract", cfg, "--range", f"{end:#x}+512", "--out", str(out)]) == 0
    assert out.read_bytes() == secret
    manifest = json.loads((tmp_path / "dump.bin.json").read_text())
    assert manifest["channel"] == "PrecededLoad" and int(manifest["range"]["start"], 16) == end


def test_extract_exit_codes(tmp_path):
    src = "strh r2, [r0]\n ldr r3, [r1]\n bx lr\n .align 4\n"
    cfg, end = firmware(tmp_path, "msp432p4-like", src, bytes(64))
    out = str(tmp_path / "d.bin")
    assert cli.main(["extract", cfg, "--range", f"{end:#x}+16", "--out", out]) == 0
    assert cli.main(["extract", cfg, "--range", f"{end:#x}+16", "--out", out,
                     "--key", hex(MSP432_DEFAULT_KEY ^ 1)]) == cli.EXIT_EXTRACTION_FAILED
    flawless, end = firmware(tmp_path, "stm32l0-like", "ldr r0, [r1]\n bx lr\n", bytes(64))
    assert cli.main(["extract", flawless, "--range", f"{end:#x}+16", "--out", out]) == cli.EXIT_NO_GADGET


def test_usage_config_and_io_errors(tmp_path):
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["recover"]) == cli.EXIT_USAGE
    assert cli.main(["recover", str(tmp_path / "missing.json")]) == cli.EXIT_IO
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert cli.main(["recover", str(bad)]) == cli.EXIT_CONFIG
    bad.write_text(json.dumps({"preset": "stm32l0-like", "flash_image_path": "nope.bin"}))
    assert cli.main(["recover", str(bad)]) == cli.EXIT_IO
    bad.write_text(json.dumps({"preset": "nope"}))
    assert cli.main(["recover", str(bad)]) == cli.EXIT_CONFIG
    cfg, _ = firmware(tmp_path, "stm32l0-like", "nop\n")
    assert cli.main(["recover", cfg, "--range", "zz"]) == cli.EXIT_USAGE
    assert cli.main(["recover", cfg, "--range", "0x800+2", "--out", str(tmp_path / "no" / "x")]) == cli.EXIT_IO


def test_parse_range():
    assert cli.parse_range("0x800:0x900") == (0x800, 0x900)
    assert cli.parse_range("0x800+0x10") == (0x800, 0x810)
    for bad in ("0x900:0x800", "12", "a:b"):
        with pytest.raises(Exception):
            cli.parse_range(bad)


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_serve_over_tcp(tmp_path):
    image = bytearray(0x1000)
    image[0x806:0x808] = encode(parse_instruction("adds r0, #0x1f")).to_bytes()
    cfg = write_config(tmp_path, "stm32l0-like", bytes(image), [(0x800, 0x808)])
    port = _free_port()
    proc = subprocess.Popen([sys.executable, "-m", "xomoracle", "serve", cfg, "--listen", f"127.0.0.1:{port}"],
                            stderr=subprocess.PIPE)
    try:
        assert b"serving" in proc.stderr.readline()
        client = WireClient("127.0.0.1", port)
        s = load_preset("stm32l0-like").blank_state()
        client.apply_state(replace(s, regs=(0x23,) + (0,) * 12, sp=0x2000_0100))
        r = client.single_step(0x806)
        assert r.state.regs[0] == 0x42 and r.state.pc == 0x808
        assert not client.send_raw("nonsense")["ok"]
        assert client.single_step(0x806).state.regs[0] == 0x61
        client.close()
    finally:
        proc.terminate()
        proc.wait(5)


def test_serve_stdio(tmp_path):
    cfg = write_config(tmp_path, "stm32l0-like", bytes(0x1000), [(0x800, 0x808)])
    req = "\n".join(['{"id": 1, "cmd": "debug_read", "addr": "0x0", "len": 4}',
                     '{"id": 2, "cmd": "debug_read", "addr": "0x800", "len": 4}', ""])
    out = subprocess.run([sys.executable, "-m", "xomoracle", "serve", cfg, "--listen", "stdio"],
                         input=req, capture_output=True, text=True, timeout=60).stdout
    first, second = (json.loads(x) for x in out.splitlines())
    assert first == {"id": 1, "ok": True, "result": "00000000"}
    assert second["error"]["type"] == "ReadBlocked"
