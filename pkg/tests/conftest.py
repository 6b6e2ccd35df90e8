import struct
from importlib import resources

import pytest

from xomoracle.device import load_preset
from xomoracle.isa import assemble, encode, parse_instruction

TARGET = 0x806  # probe address inside every preset's default XOM window


def filler_image(size: int = 0x1000) -> bytes:
    """Distinct words everywhere, so stray literal reads are recognisable."""
    return b"".join(struct.pack("<I", (0x9E3779B1 * (k + 1)) & 0xFFFFFFFF) for k in range(size // 4))


def planted(preset: str, text: str, offset: int = TARGET):
    """A preset device with one instruction planted at ``flash_base + offset``."""
    dev = load_preset(preset, filler_image())
    addr = dev.flash_base + offset
    ins = parse_instruction(text, addr)
    return dev.with_flash(addr, encode(ins).to_bytes()), addr, ins


def protected(preset: str, source: str, offset: int = 0x800, *, tail: bytes = b""):
    """Assemble ``source`` at ``flash_base + offset`` and make it (plus ``tail``) XOM."""
    from xomoracle.device.presets import PRESETS
    base = PRESETS[preset].flash_base
    prog = assemble(source, base + offset)
    image = bytes(offset) + prog.image + tail
    dev = load_preset(preset, image, xom_ranges=[(base + offset, base + len(image))])
    return dev, prog


def demo_source(name: str) -> str:
    return resources.files("xomoracle.demo").joinpath(name).read_text()


@pytest.fixture
def l0_planted():
    return lambda text: planted("stm32l0-like", text)


# acceptance lines, echoed again at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
