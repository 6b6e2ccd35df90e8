"""Input-state specifications for the instruction oracle.

The memory layout places unique word IDs from the SRAM base up to 256 words
above ``sp``: 32 words for immediate offsets, 8 for register offsets, then
the push area below ``sp`` and the pop / sp-relative area above it. Within
the first 256 bytes every byte value occurs exactly once, and every
halfword of the whole region is distinct, so narrow loads reveal the
address they read.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..isa.machine import SystemState, flags_value

SRAM_BASE = 0x2000_0000
STACK_TOP = SRAM_BASE + 0xC0
ID_WORDS_ABOVE_SP = 256
PUSH_POP_WORDS = 16

GROUPS = ("memory", "push-pop", "branch", "pc-relative", "flag-sweep")

# values for r8-r12 and the banked stack pointer, shared by all specs;
# distinct from each other, from the IDs and from the low registers
HI_REGS = (0x108, 0x10C, 0x110, 0x114, 0x118)
SP_ALT = SRAM_BASE + 0x1800
BAD_ADDRESS = 0x8000_0000


def id_word(k: int) -> int:
    """ID of the SRAM word at offset ``4k``."""
    b = [((4 * k + i) & 0xFF) ^ 0x5A for i in range(4)]
    # past the first 256 bytes the block number keeps halfwords unique
    b[1] ^= (k >> 6) & 0xFF
    b[3] ^= (k >> 6) & 0xFF
    return b[0] | b[1] << 8 | b[2] << 16 | b[3] << 24


def id_words(n: int) -> list[int]:
    return [id_word(k) for k in range(n)]


@dataclass(frozen=True)
class SramRegion:
    addr: int
    words: tuple[int, ...]
    label: str = ""


@dataclass(frozen=True)
class InputStateSpec:
    purpose: str
    registers: dict = field(default_factory=dict)  # "r0".."r12", "sp", "lr"
    regions: tuple[SramRegion, ...] = ()
    apsr: int = 0
    extras: dict = field(default_factory=dict)  # primask, control, sp_alt, ipsr

    def to_state(self, pc: int, sram_base: int = SRAM_BASE, sram_size: int = 0x2000) -> SystemState:
        sram = bytearray(sram_size)
        for region in self.regions:
            off = region.addr - sram_base
            for i, w in enumerate(region.words):
                if 0 <= off + 4 * i and off + 4 * i + 4 <= sram_size:
                    sram[off + 4 * i:off + 4 * i + 4] = w.to_bytes(4, "little")
        regs = tuple(self.registers.get(f"r{i}", 0) for i in range(13))
        return SystemState(
            regs=regs, sp=self.registers.get("sp", STACK_TOP), lr=self.registers.get("lr", 0),
            pc=pc, apsr=self.apsr, sram=bytes(sram), sram_base=sram_base,
            sp_alt=self.extras.get("sp_alt", SP_ALT), primask=self.extras.get("primask", 0),
            control=self.extras.get("control", 0), ipsr=self.extras.get("ipsr", 0))


def _hi(regs: dict) -> dict:
    for i, v in enumerate(HI_REGS):
        regs.setdefault(f"r{8 + i}", v)
    return regs


def memory_regions(sp: int = STACK_TOP) -> tuple[SramRegion, ...]:
    n = (sp - SRAM_BASE) // 4 + ID_WORDS_ABOVE_SP
    words = id_words(n)
    return (
        SramRegion(SRAM_BASE, tuple(words[:32]), "i_0..i_31"),
        SramRegion(SRAM_BASE + 0x80, tuple(words[32:40]), "a_0..a_7"),
        SramRegion(SRAM_BASE + 0xA0, tuple(words[40:n]), "stack ids"),
    )


def initial_input_state(group: str) -> InputStateSpec:
    """The register and SRAM assignment for one instruction group."""
    if group in ("memory", "flag-sweep"):
        regs = {"r0": 0x80, "r1": SRAM_BASE, "r2": 0x84, "r3": SRAM_BASE,
                "r4": 0x88, "r5": SRAM_BASE, "r6": 0x8C, "r7": SRAM_BASE,
                "sp": STACK_TOP, "lr": 0x11C}
        return InputStateSpec(group, _hi(regs), memory_regions())
    if group == "pc-relative":
        regs = {f"r{i}": BAD_ADDRESS for i in range(8)}
        regs.update(sp=STACK_TOP, lr=0x11C)
        return InputStateSpec(group, _hi(regs), memory_regions())
    if group == "push-pop":
        regs = {f"r{i}": 0xF0 + i for i in range(8)}
        regs.update(lr=0xF8, sp=STACK_TOP)
        for i in range(5):
            regs[f"r{8 + i}"] = 0xF9 + i
        zero = (0,) * PUSH_POP_WORDS
        return InputStateSpec(group, regs, (
            SramRegion(STACK_TOP - 4 * PUSH_POP_WORDS, zero, "push area"),
            SramRegion(STACK_TOP, zero, "pop area")))
    if group == "branch":
        regs = {"r0": SRAM_BASE + 0xE0, "lr": SRAM_BASE + 0xD0, "sp": STACK_TOP}
        for i in range(1, 13):
            regs[f"r{i}"] = SRAM_BASE + 0x10 * (i - 1)
        zero = (0,) * PUSH_POP_WORDS
        return InputStateSpec(group, regs, (
            SramRegion(STACK_TOP - 4 * PUSH_POP_WORDS, zero, "push area"),
            SramRegion(STACK_TOP, zero, "pop area")))
    raise ValueError(f"unknown input-state group {group!r}")


def flag_settings() -> list[int]:
    """The 16 NZCV settings in sweep order: singles first, then the rest."""
    order = [0, flags_value(z=1), flags_value(c=1), flags_value(n=1), flags_value(v=1)]
    for bits in range(16):
        f = bits << 28
        if f not in order:
            order.append(f)
    return order
