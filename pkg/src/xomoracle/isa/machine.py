"""System state, execution outcomes and the pure ``execute`` entry point."""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Protocol

from .instruction import Instruction

if os.environ.get("XOMORACLE_PURE"):
    from . import _exec as _kernel
else:
    try:
        from . import _cexec as _kernel  # type: ignore[attr-defined]
    except ImportError:
        from . import _exec as _kernel

KERNEL = "compiled" if _kernel.__name__.endswith("_cexec") else "python"

M32 = 0xFFFFFFFF
N_FLAG, Z_FLAG, C_FLAG, V_FLAG = 1 << 31, 1 << 30, 1 << 29, 1 << 28


def flags_value(n=0, z=0, c=0, v=0) -> int:
    return (n << 31) | (z << 30) | (c << 29) | (v << 28)


@dataclass(frozen=True, eq=False)
class SystemState:
    """The attacker-observable shared state: core registers, APSR and SRAM.

    ``regs`` holds r0-r12. ``sp`` is the active stack pointer and ``sp_alt``
    the banked one. ``apsr`` keeps NZCV in bits 31:28.
    """

    regs: tuple[int, ...] = (0,) * 13
    sp: int = 0
    lr: int = 0
    pc: int = 0
    apsr: int = 0
    sram: bytes = b""
    sram_base: int = 0x2000_0000
    epsr_t: int = 1
    primask: int = 0
    control: int = 0
    sp_alt: int = 0
    ipsr: int = 0

    def __post_init__(self):
        if len(self.regs) != 13:
            raise ValueError("regs must hold r0-r12")
        if not isinstance(self.sram, bytes):
            object.__setattr__(self, "sram", bytes(self.sram))
        if self.apsr & ~0xF000_0000:
            raise ValueError("apsr only carries NZCV")

    @cached_property
    def key(self) -> tuple:
        return (self.regs, self.sp, self.lr, self.pc, self.apsr, self.epsr_t,
                self.primask, self.control, self.sp_alt, self.ipsr,
                self.sram_base, self.sram)

    def __eq__(self, other):
        if not isinstance(other, SystemState):
            return NotImplemented
        return self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def reg(self, i: int) -> int:
        if i < 13:
            return self.regs[i]
        return (self.sp, self.lr, self.pc)[i - 13]

    def with_regs(self, **changes) -> "SystemState":
        """Return a copy with ``r0=..``, ``sp=..`` etc. replaced."""
        regs = list(self.regs)
        other = {}
        for name, value in changes.items():
            if name.startswith("r") and name[1:].isdigit():
                regs[int(name[1:])] = value & M32
            else:
                other[name] = value
        return replace(self, regs=tuple(regs), **other)

    def with_sram(self, addr: int, data: bytes) -> "SystemState":
        off = addr - self.sram_base
        if off < 0 or off + len(data) > len(self.sram):
            raise ValueError(f"{addr:#x}+{len(data)} outside SRAM")
        buf = bytearray(self.sram)
        buf[off:off + len(data)] = data
        return replace(self, sram=bytes(buf))

    def read_word(self, addr: int) -> int:
        off = addr - self.sram_base
        return int.from_bytes(self.sram[off:off + 4], "little")

    @property
    def flags(self) -> dict[str, int]:
        return {f: (self.apsr >> s) & 1 for f, s in zip("NZCV", (31, 30, 29, 28))}

    def changed_registers(self, other: "SystemState") -> set[int]:
        return {i for i in range(15) if self.reg(i) != other.reg(i)}

    def sram_diff(self, other: "SystemState") -> list[int]:
        return [self.sram_base + i for i, (a, b) in enumerate(zip(self.sram, other.sram)) if a != b]

    def describe(self) -> str:
        names = [f"r{i}" for i in range(13)] + ["sp", "lr", "pc"]
        body = " ".join(f"{n}={self.reg(i):#x}" for i, n in enumerate(names))
        f = self.flags
        return f"{body} NZCV={f['N']}{f['Z']}{f['C']}{f['V']} T={self.epsr_t}"


class OutcomeKind(enum.Enum):
    COMPLETED = "completed"
    HARDFAULT = "hardfault"
    SVCALL = "svcall"
    BREAKPOINT = "breakpoint"


_KIND_BY_STATUS = {
    _kernel.COMPLETED: OutcomeKind.COMPLETED,
    _kernel.HARDFAULT: OutcomeKind.HARDFAULT,
    _kernel.SVCALL: OutcomeKind.SVCALL,
    _kernel.BREAKPOINT: OutcomeKind.BREAKPOINT,
}


@dataclass(frozen=True)
class FaultRecord:
    address: int
    access: str

    def __str__(self):
        return f"{self.access} @ {self.address:#010x}"


@dataclass(frozen=True)
class ExecOutcome:
    kind: OutcomeKind
    state: SystemState
    cycles: int = 0
    fault: FaultRecord | None = None
    mmio_writes: tuple[tuple[int, int, int], ...] = field(default=())

    @property
    def completed(self) -> bool:
        return self.kind is OutcomeKind.COMPLETED


class MemoryPolicy(Protocol):
    """Everything outside the SRAM window: flash, XOM rules, peripherals.

    ``load`` returns ``None`` to fault; ``store`` returns ``False`` to fault.
    """

    def load(self, addr: int, size: int, pc_relative: bool) -> int | None: ...

    def store(self, addr: int, size: int, value: int) -> bool: ...


class NoMemory:
    """Nothing mapped beyond SRAM."""

    def load(self, addr, size, pc_relative):
        return None

    def store(self, addr, size, value):
        return False


class FlatMemory:
    """Readable (optionally writable) byte image at a base address."""

    def __init__(self, base: int, image: bytes, writable: bool = False):
        self.base = base
        self.image = bytearray(image) if writable else bytes(image)
        self.writable = writable

    def load(self, addr, size, pc_relative):
        off = addr - self.base
        if 0 <= off and off + size <= len(self.image):
            return int.from_bytes(self.image[off:off + size], "little")
        return None

    def store(self, addr, size, value):
        off = addr - self.base
        if self.writable and 0 <= off and off + size <= len(self.image):
            self.image[off:off + size] = value.to_bytes(size, "little")
            return True
        return False


def execute(state: SystemState, ins: Instruction, mem_policy: MemoryPolicy | None = None) -> ExecOutcome:
    """Execute ``ins`` located at ``state.pc`` and return the outcome.

    Pure: ``state`` is never modified. On anything but completion the
    returned state is the pre-instruction state.
    """
    mem = mem_policy if mem_policy is not None else NoMemory()
    regs = list(state.regs)
    regs.extend((state.sp, state.lr, state.pc))
    cpu = _kernel.Cpu(regs, state.apsr, state.epsr_t, state.primask,
                      state.control, state.sp_alt, state.ipsr, state.sram,
                      state.sram_base, mem)
    status, fault = _kernel.step(cpu, ins, state.pc, ins.width)
    kind = _KIND_BY_STATUS[status]
    if kind is not OutcomeKind.COMPLETED:
        record = FaultRecord(*fault) if fault else None
        return ExecOutcome(kind, state, 0, record)
    r = cpu.r
    sram = bytes(cpu.sram) if cpu.sram_dirty else state.sram
    nxt = SystemState(
        regs=tuple(r[:13]), sp=r[13], lr=r[14], pc=r[15], apsr=cpu.flags(),
        sram=sram, sram_base=state.sram_base, epsr_t=cpu.t,
        primask=cpu.primask, control=cpu.spsel << 1, sp_alt=cpu.sp_alt,
        ipsr=state.ipsr)
    return ExecOutcome(kind, nxt, cpu.cycles, None, tuple(cpu.mmio or ()))
