"""Simulated XOM-protected microcontroller and its oracle interface."""

from __future__ import annotations

import copy
import enum
import zlib
from dataclasses import dataclass, replace

from ..isa.instruction import Encoding, Instruction, decode, is_wide_prefix
from ..isa.machine import FaultRecord, OutcomeKind, SystemState, execute
from .stacking import StackingFault, reconstruct, stack_exception

DEFAULT_GUARD = 4096
SRAM_BASE = 0x2000_0000
SRAM_SIZE = 0x2000


class DeviceError(Exception):
    pass


class UnknownPreset(DeviceError):
    pass


class GeometryMismatch(DeviceError):
    pass


class ReadBlocked(DeviceError):
    def __init__(self, addr):
        super().__init__(f"debug read of {addr:#010x} blocked")
        self.addr = addr


class Unmapped(DeviceError):
    def __init__(self, addr):
        super().__init__(f"{addr:#010x} is not mapped")
        self.addr = addr


class LoadPolicy(enum.Enum):
    """Which data loads may read XOM while executing from XOM."""

    DENY_FAULT = "DenyFault"
    PC_RELATIVE_ONLY = "PcRelativeOnly"
    ALL_LOADS = "AllLoads"
    UNLOCKABLE = "Unlockable"


class ResponseKind(enum.Enum):
    STEPPED = "Stepped"
    FAULTED = "Faulted"
    STEP_DENIED = "StepDenied"
    INTERRUPT_TAKEN = "InterruptTaken"
    RUNAWAY = "Runaway"


@dataclass(frozen=True)
class OracleResponse:
    kind: ResponseKind
    state: SystemState | None = None
    fault: FaultRecord | None = None
    exception: str | None = None
    cycles: int = 0
    retired: int = 0


@dataclass(frozen=True)
class DevicePolicy:
    single_step_in_xom: bool = True
    xom_load_policy: LoadPolicy = LoadPolicy.DENY_FAULT
    preceding_non_loads: int = 0
    unlock_key: int | None = None
    auto_relock: bool = False
    folding: bool = False
    folding_seed: int = 0
    itcm_alias: int | None = None
    sram_debug_block: bool = False

    def __post_init__(self):
        if self.xom_load_policy is LoadPolicy.UNLOCKABLE and self.unlock_key is None:
            raise ValueError("Unlockable policy needs an unlock_key")
        if self.unlock_key is not None and not 0 <= self.unlock_key <= 0xFFFF:
            raise ValueError("unlock_key is a 16-bit value")


@dataclass(frozen=True)
class MemoryMap:
    """The public geometry of a device: everything but the XOM contents."""

    flash_base: int
    flash_size: int
    xom_ranges: tuple[tuple[int, int], ...]
    sram_base: int
    sram_size: int
    policy: DevicePolicy

    @property
    def unlock_register(self) -> int:
        return self.sram_base + self.sram_size

    def in_xom(self, addr: int) -> bool:
        return any(lo <= addr < hi for lo, hi in self.xom_ranges)

    def in_flash(self, addr: int) -> bool:
        return self.flash_base <= addr < self.flash_base + self.flash_size

    def flash_address(self, addr: int) -> int | None:
        """Normalise a CPU address in the flash or alias window."""
        if self.in_flash(addr):
            return addr
        alias = self.policy.itcm_alias
        if alias is not None and alias <= addr < alias + self.flash_size:
            return addr - alias + self.flash_base
        return None

    def xom_load_allowed(self, pc_relative: bool, non_loads: int, unlocked: bool) -> bool:
        p = self.policy
        kind = p.xom_load_policy
        if kind is LoadPolicy.DENY_FAULT:
            return False
        if kind is LoadPolicy.PC_RELATIVE_ONLY:
            return pc_relative
        if kind is LoadPolicy.ALL_LOADS:
            return pc_relative or non_loads >= p.preceding_non_loads
        return unlocked


def is_load(ins: Instruction) -> bool:
    return ins.op.startswith("ldr") or ins.op in ("ldm", "pop")


_FOLDABLE = frozenset({
    "lsls_imm", "lsrs_imm", "asrs_imm", "adds_reg", "subs_reg", "adds_imm3",
    "subs_imm3", "movs_imm", "cmp_imm", "adds_imm8", "subs_imm8", "ands",
    "eors", "lsls_reg", "lsrs_reg", "asrs_reg", "adcs", "sbcs", "rors", "tst",
    "rsbs", "cmp_reg", "cmn", "orrs", "muls", "bics", "mvns", "sxth", "sxtb",
    "uxth", "uxtb", "rev", "rev16", "revsh",
})


def foldable(ins: Instruction) -> bool:
    return ins.op in _FOLDABLE


class _Bus:
    """Memory policy handed to the execution kernel for one instruction."""

    __slots__ = ("dev", "exec_pc")

    def __init__(self, dev: "DeviceModel", exec_pc: int):
        self.dev = dev
        self.exec_pc = exec_pc

    def load(self, addr, size, pc_relative):
        dev = self.dev
        mm = dev.memory_map
        faddr = mm.flash_address(addr)
        if faddr is not None:
            if mm.in_xom(faddr):
                if not mm.in_xom(self.exec_pc):
                    return None
                if not mm.xom_load_allowed(pc_relative, dev._non_loads, dev._unlocked):
                    return None
            off = faddr - mm.flash_base
            return int.from_bytes(dev.flash[off:off + size], "little")
        if addr == mm.unlock_register and mm.policy.xom_load_policy is LoadPolicy.UNLOCKABLE:
            return int(dev._unlocked) if size == 4 else 0
        return None

    def store(self, addr, size, value):
        dev = self.dev
        mm = dev.memory_map
        if addr == mm.unlock_register and mm.policy.xom_load_policy is LoadPolicy.UNLOCKABLE:
            if size >= 2 and mm.in_xom(self.exec_pc) and value & 0xFFFF == mm.policy.unlock_key:
                dev._unlocked = True
            return True
        return False


class DeviceModel:
    """A mutable device: apply a state, run protected code, read results back.

    One caller at a time; use ``clone`` for parallel work.
    """

    def __init__(self, flash: bytes, *, flash_base: int = 0, flash_size: int | None = None,
                 xom_ranges=(), sram_base: int = SRAM_BASE, sram_size: int = SRAM_SIZE,
                 policy: DevicePolicy | None = None, preset: str = "custom"):
        size = flash_size if flash_size is not None else len(flash)
        if len(flash) > size:
            raise ValueError("flash image larger than the flash size")
        self.flash = bytes(flash) + b"\xff" * (size - len(flash))
        ranges = tuple(sorted((int(lo), int(hi)) for lo, hi in xom_ranges))
        for lo, hi in ranges:
            if not (flash_base <= lo < hi <= flash_base + size):
                raise ValueError(f"XOM range {lo:#x}-{hi:#x} not inside flash")
        if sram_base < flash_base + size and flash_base < sram_base + sram_size:
            raise ValueError("SRAM overlaps flash")
        self.memory_map = MemoryMap(flash_base, size, ranges, sram_base, sram_size,
                                    policy or DevicePolicy())
        self.preset = preset
        self.stats = {"apply_state": 0, "single_step": 0, "run_until_interrupt": 0,
                      "debug_read": 0}
        self._decode_cache: dict[int, Instruction] = {}
        self.reset()

    # ------------------------------------------------------------ basics
    @property
    def policy(self) -> DevicePolicy:
        return self.memory_map.policy

    @property
    def flash_base(self) -> int:
        return self.memory_map.flash_base

    @property
    def xom_ranges(self):
        return self.memory_map.xom_ranges

    @property
    def state(self) -> SystemState:
        return self._state

    @property
    def unlocked(self) -> bool:
        return self._unlocked

    @property
    def oracle_queries(self) -> int:
        return self.stats["single_step"] + self.stats["run_until_interrupt"]

    def in_xom(self, addr: int) -> bool:
        return self.memory_map.in_xom(addr)

    def reset(self):
        mm = self.memory_map
        self._state = SystemState(sram=bytes(mm.sram_size), sram_base=mm.sram_base)
        self._unlocked = False
        self._non_loads = 0
        self._cpu_in_xom = False

    def clone(self) -> "DeviceModel":
        other = copy.copy(self)
        other.stats = dict.fromkeys(self.stats, 0)
        other._decode_cache = self._decode_cache
        return other

    def with_flash(self, addr: int, data: bytes) -> "DeviceModel":
        """A clone whose flash holds ``data`` at ``addr`` (test fixture helper)."""
        off = addr - self.flash_base
        if off < 0 or off + len(data) > len(self.flash):
            raise ValueError(f"{addr:#x}+{len(data)} outside flash")
        other = self.clone()
        other.flash = self.flash[:off] + bytes(data) + self.flash[off + len(data):]
        other._decode_cache = {}
        other.reset()
        return other

    def with_policy(self, **changes) -> "DeviceModel":
        other = self.clone()
        other.memory_map = replace(self.memory_map, policy=replace(self.policy, **changes))
        other._decode_cache = {}
        return other

    def blank_state(self) -> SystemState:
        mm = self.memory_map
        return SystemState(sram=bytes(mm.sram_size), sram_base=mm.sram_base)

    # ------------------------------------------------------------ oracle step 1
    def apply_state(self, s: SystemState) -> None:
        """Load registers and SRAM; clears every artefact of earlier runs."""
        mm = self.memory_map
        if s.sram_base != mm.sram_base or len(s.sram) != mm.sram_size:
            raise GeometryMismatch(
                f"state SRAM {s.sram_base:#x}+{len(s.sram):#x} does not match "
                f"device {mm.sram_base:#x}+{mm.sram_size:#x}")
        self.stats["apply_state"] += 1
        self._state = replace(s, sp=s.sp & ~3, sp_alt=s.sp_alt & ~3, pc=s.pc & ~1,
                              control=s.control & 2, primask=s.primask & 1)
        self._unlocked = False
        self._non_loads = 0
        self._cpu_in_xom = self.in_xom(self._state.pc)

    # ------------------------------------------------------------ execution
    def fetch(self, addr: int) -> Instruction | None:
        """Decode the instruction at ``addr``; ``None`` when not fetchable."""
        cached = self._decode_cache.get(addr)
        if cached is not None:
            return cached
        mm = self.memory_map
        faddr = mm.flash_address(addr)
        if faddr is None or addr & 1:
            return None
        off = faddr - mm.flash_base
        hw = int.from_bytes(self.flash[off:off + 2], "little")
        if is_wide_prefix(hw):
            if off + 4 > len(self.flash):
                ins = Instruction("undefined", raw=(hw,))
            else:
                ins = decode(Encoding.from_bytes(self.flash, off))
        else:
            ins = decode(hw)
        self._decode_cache[addr] = ins
        return ins

    def _execute_at(self, state: SystemState):
        """Run the instruction at ``state.pc``; returns (ins, outcome)."""
        pc = state.pc
        if not state.epsr_t:
            return None, execute(state, Instruction("nop"), _Bus(self, pc))
        ins = self.fetch(pc)
        if ins is None:
            return None, None
        out = execute(state, ins, _Bus(self, pc))
        if out.kind is OutcomeKind.COMPLETED:
            if self.in_xom(pc):
                if not is_load(ins):
                    self._non_loads += 1
            else:
                self._non_loads = 0
                if self.policy.auto_relock:
                    self._unlocked = False
        return ins, out

    @staticmethod
    def _exception_name(kind: OutcomeKind, debug_halting: bool) -> str:
        if kind is OutcomeKind.SVCALL:
            return "svcall"
        if kind is OutcomeKind.BREAKPOINT and debug_halting:
            return "breakpoint"
        return "hardfault"

    def single_step(self, addr: int) -> OracleResponse:
        """Execute exactly one instruction at ``addr`` under debugger control."""
        self.stats["single_step"] += 1
        mm = self.memory_map
        if addr & 1 or mm.flash_address(addr) is None:
            raise ValueError(f"{addr:#x} is not a halfword-aligned flash address")
        if self.in_xom(addr) and not self.policy.single_step_in_xom:
            return OracleResponse(ResponseKind.STEP_DENIED, self._state)
        state = replace(self._state, pc=addr)
        _, out = self._execute_at(state)
        if out.kind is not OutcomeKind.COMPLETED:
            name = self._exception_name(out.kind, True)
            return OracleResponse(ResponseKind.FAULTED, state, out.fault, name, 1, 0)
        self._state = out.state
        self._cpu_in_xom = self.in_xom(out.state.pc)
        return OracleResponse(ResponseKind.STEPPED, out.state, None, None, out.cycles, 1)

    def _fold_pair(self, addr: int, state: SystemState, ins: Instruction) -> bool:
        p = self.policy
        if not p.folding or ins.width != 2 or not foldable(ins):
            return False
        nxt = self.fetch(addr + 2)
        if nxt is None or nxt.width != 2 or not foldable(nxt):
            return False
        key = repr((p.folding_seed, addr, state.regs, state.apsr)).encode()
        return zlib.crc32(key) & 1 == 0

    def run_until_interrupt(self, entry: int, tick: int, guard: int = DEFAULT_GUARD) -> OracleResponse:
        """Start at ``entry`` with SysTick armed to fire after ``tick`` cycles.

        An instruction begins only if it can finish by the deadline; once the
        deadline is reached the interrupt is taken at the next boundary unless
        PRIMASK masks it. The second half of a folded pair never sees the
        interrupt.
        """
        if tick < 1 or guard < 1:
            raise ValueError("tick and guard must be positive")
        self.stats["run_until_interrupt"] += 1
        input_state = self._state
        state = replace(input_state, pc=entry)
        elapsed = retired = 0
        in_fold = False
        while True:
            if retired >= guard:
                self._state = state
                return OracleResponse(ResponseKind.RUNAWAY, state, None, None, elapsed, retired)
            saved = (self._non_loads, self._unlocked)
            ins, out = self._execute_at(state)
            ok = out is not None and out.kind is OutcomeKind.COMPLETED
            cost = out.cycles if ok else 1
            if not in_fold and elapsed + cost > tick and not state.primask:
                self._non_loads, self._unlocked = saved
                return self._take_interrupt(state, input_state, elapsed, retired)
            if not ok:
                name = self._exception_name(out.kind, False) if out else "hardfault"
                fault = out.fault if out else FaultRecord(state.pc, "fetch")
                self._state = state
                return OracleResponse(ResponseKind.FAULTED, state, fault, name, elapsed + 1, retired)
            in_fold = not in_fold and self._fold_pair(state.pc, state, ins)
            elapsed += cost
            retired += 1
            state = out.state

    def _take_interrupt(self, state, input_state, elapsed, retired) -> OracleResponse:
        if self.policy.auto_relock:
            self._unlocked = False
        self._non_loads = 0
        self._cpu_in_xom = False
        try:
            view = stack_exception(state)
        except StackingFault as exc:
            self._state = state
            fault = FaultRecord(exc.frame_addr, "stacking")
            return OracleResponse(ResponseKind.FAULTED, None, fault, "lockup", elapsed, retired)
        out = reconstruct(view, input_state)
        self._state = out
        return OracleResponse(ResponseKind.INTERRUPT_TAKEN, out, None, None, elapsed, retired)

    # ------------------------------------------------------------ debug port
    def debug_read(self, addr: int, length: int) -> bytes:
        """Read through the debug access port, honouring the XOM filters."""
        if length < 1:
            raise ValueError("length must be at least 1")
        self.stats["debug_read"] += 1
        mm = self.memory_map
        end = addr + length
        if (mm.in_flash(addr) and mm.in_flash(end - 1)
                and not any(lo < end and addr < hi for lo, hi in mm.xom_ranges)):
            off = addr - mm.flash_base
            return self.flash[off:off + length]
        out = bytearray()
        for a in range(addr, end):
            if mm.in_flash(a):
                if mm.in_xom(a):
                    raise ReadBlocked(a)
                out.append(self.flash[a - mm.flash_base])
                continue
            alias = mm.policy.itcm_alias
            if alias is not None and alias <= a < alias + mm.flash_size:
                # the alias path is treated as an instruction fetch and not filtered
                out.append(self.flash[a - alias])
                continue
            off = a - mm.sram_base
            if 0 <= off < mm.sram_size:
                if mm.policy.sram_debug_block and self._cpu_in_xom:
                    raise ReadBlocked(a)
                out.append(self._state.sram[off])
                continue
            raise Unmapped(a)
        return bytes(out)

    def readable_flash(self) -> dict[int, bytes]:
        """Every maximal non-XOM flash span, as the debugger can read it."""
        mm = self.memory_map
        spans, lo = {}, mm.flash_base
        for xlo, xhi in mm.xom_ranges:
            if xlo > lo:
                spans[lo] = self.debug_read(lo, xlo - lo)
            lo = max(lo, xhi)
        end = mm.flash_base + mm.flash_size
        if lo < end:
            spans[lo] = self.debug_read(lo, end - lo)
        return spans

    def __repr__(self):
        ranges = ", ".join(f"{lo:#x}-{hi:#x}" for lo, hi in self.xom_ranges)
        return f"<DeviceModel {self.preset} xom=[{ranges}]>"
