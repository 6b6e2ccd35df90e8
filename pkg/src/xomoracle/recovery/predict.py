"""Simulated observations of candidate instructions.

An *observation* is what the attacker sees after one oracle probe, reduced
to a hashable tuple:

``("ok", state_key, cycles)``
    the instruction retired and left ``state_key``
``("exc", name)``
    it faulted; only the exception class is visible
``("lockup", cycles)``
    it retired but left a stack pointer the interrupt could not stack to
``("irregular",)``
    interrupt-driven probes only: the run did not stop right after the
    target (PRIMASK set, a folded pair, or a later fault)

Predictions run the candidate on the attacker's own model of the device:
the public memory map plus every flash byte the debugger can read. A load
that the device would allow from XOM cannot be predicted; such candidates
are *wild* and are compared with the destination registers masked out.
"""

from __future__ import annotations

from dataclasses import replace

from ..device.model import LoadPolicy, MemoryMap, foldable
from ..device.stacking import StackingFault, reconstruct, stack_exception
from ..isa.instruction import MSR_READ_ONLY, SYSM_NAMES, Instruction, decode16, is_wide_prefix
from ..isa.machine import M32, OutcomeKind, SystemState, execute

SINGLE_STEP = "single-step"
INTERRUPT = "interrupt"
STRATEGIES = (SINGLE_STEP, INTERRUPT)

IRREGULAR = ("irregular",)

# stands for every encoding that faults whatever the input state
DATA_CANDIDATE = Instruction("data")

_PC = 3       # index of pc in SystemState.key
_EPSR_T = 5   # index of epsr_t
PC_BIT = 1 << 15  # pc in a pop register list


class KnownMemory:
    """Prediction-side memory policy mirroring the device's bus rules."""

    __slots__ = ("mm", "flash", "exec_pc", "unknown")

    def __init__(self, mm: MemoryMap, flash: bytes, exec_pc: int):
        self.mm = mm
        self.flash = flash
        self.exec_pc = exec_pc
        self.unknown = False

    def load(self, addr, size, pc_relative):
        mm = self.mm
        faddr = mm.flash_address(addr)
        if faddr is not None:
            if mm.in_xom(faddr) or mm.in_xom(faddr + size - 1):
                if not mm.in_xom(self.exec_pc):
                    return None
                if not mm.xom_load_allowed(pc_relative, 0, False):
                    return None
                self.unknown = True
                return 0
            off = faddr - mm.flash_base
            return int.from_bytes(self.flash[off:off + size], "little")
        if addr == mm.unlock_register and mm.policy.xom_load_policy is LoadPolicy.UNLOCKABLE:
            return 0
        return None

    def store(self, addr, size, value):
        mm = self.mm
        return addr == mm.unlock_register and mm.policy.xom_load_policy is LoadPolicy.UNLOCKABLE


def known_flash(mm: MemoryMap, spans: dict[int, bytes]) -> bytes:
    """Flash image as the attacker knows it; XOM bytes are zero."""
    buf = bytearray(mm.flash_size)
    for addr, data in spans.items():
        off = addr - mm.flash_base
        buf[off:off + len(data)] = data
    return bytes(buf)


def destination_mask(ins: Instruction) -> tuple[frozenset, bool]:
    """Registers a load writes with memory data, and whether pc is one."""
    if ins.op in ("ldm", "pop"):
        regs = frozenset(i for i in range(8) if ins.regs >> i & 1)
        return regs, ins.op == "pop" and bool(ins.regs & PC_BIT)
    return frozenset({ins.rd}), False


def _mask_key(key: tuple, regs: frozenset, pc: bool) -> tuple:
    out = list(key)
    out[0] = tuple(None if i in regs else v for i, v in enumerate(key[0]))
    if pc:
        out[_PC] = out[_EPSR_T] = None
    return tuple(out)


def mask_observation(obs: tuple, mask) -> tuple:
    if obs[0] != "ok":
        return obs
    return ("ok", _mask_key(obs[1], *mask), obs[2])


def normalize(obs: tuple, addr: int) -> tuple:
    """Make an observation independent of the probe address."""
    if obs[0] == "ok":
        key = list(obs[1])
        key[_PC] = (key[_PC] - addr) & M32
        return ("ok", tuple(key), obs[2])
    return obs


def observation_from_response(resp, strategy: str, tick: int | None = None) -> tuple:
    """Reduce a device response to an observation."""
    kind = resp.kind.value
    if strategy == SINGLE_STEP:
        if kind == "Stepped":
            return ("ok", resp.state.key, resp.cycles)
        if kind == "Faulted":
            return ("exc", resp.exception)
        raise ValueError(f"unexpected single-step response {kind}")
    if kind == "InterruptTaken" and resp.retired == 1:
        return ("ok", resp.state.key, tick)
    if kind == "Faulted" and resp.retired == 0:
        return ("exc", resp.exception)
    if kind == "Faulted" and resp.exception == "lockup" and resp.retired == 1:
        return ("lockup", tick)
    return IRREGULAR


class Predictor:
    """Simulates candidates against one device description."""

    def __init__(self, mm: MemoryMap, flash: bytes, strategy: str = SINGLE_STEP):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        self.mm = mm
        self.flash = flash
        self.strategy = strategy
        self.folding = strategy == INTERRUPT and mm.policy.folding

    @property
    def interrupt(self) -> bool:
        return self.strategy == INTERRUPT

    def _exc(self, kind: OutcomeKind) -> tuple:
        if kind is OutcomeKind.SVCALL:
            return ("exc", "svcall")
        if kind is OutcomeKind.BREAKPOINT and not self.interrupt:
            return ("exc", "breakpoint")
        return ("exc", "hardfault")

    def run(self, ins: Instruction, state: SystemState):
        """Return ``(observation, mask)``; ``mask`` is set for wild loads."""
        bus = KnownMemory(self.mm, self.flash, state.pc)
        out = execute(state, ins, bus)
        if out.kind is not OutcomeKind.COMPLETED:
            return self._exc(out.kind), None
        post, cycles = out.state, out.cycles
        if self.interrupt:
            # the interrupt is taken after the target only if the target
            # leaves it unmasked (cpsie i unmasks a masked one)
            if post.primask:
                return IRREGULAR, None
            try:
                view = stack_exception(post)
            except StackingFault:
                return ("lockup", cycles), None
            post = reconstruct(view, state)
        obs = ("ok", post.key, cycles)
        if bus.unknown:
            mask = destination_mask(ins)
            return mask_observation(obs, mask), mask
        return obs, None

    def predict(self, ins: Instruction, state: SystemState) -> tuple:
        return self.run(ins, state)[0]

    def cycles(self, ins: Instruction, state: SystemState) -> int:
        """Cycles the candidate would take (1 for faults)."""
        out = execute(state, ins, KnownMemory(self.mm, self.flash, state.pc))
        return out.cycles if out.kind is OutcomeKind.COMPLETED else 1

    def matches(self, ins: Instruction, state: SystemState, obs: tuple) -> bool:
        pred, mask = self.run(ins, state)
        if mask is not None:
            return mask_observation(obs, mask) == pred
        if pred == obs:
            return True
        return obs == IRREGULAR and self.folding and foldable(ins)


# ------------------------------------------------------------ enumeration


def pc_dependent(ins: Instruction) -> bool:
    """Whether the outcome depends on the instruction's own address."""
    op = ins.op
    if op in ("ldr_lit", "adr", "bx", "blx", "bl"):
        return True
    if op in ("add_hi", "mov_hi", "cmp_hi"):
        return 15 in (ins.rd, ins.rn, ins.rm)
    return op == "pop" and bool(ins.regs & PC_BIT)


def _wide_candidates() -> list[Instruction]:
    out = [Instruction(op, imm=0xF) for op in ("dmb", "dsb", "isb")]
    for sysm in SYSM_NAMES:
        for r in range(15):
            if r != 13:
                if sysm not in MSR_READ_ONLY:
                    out.append(Instruction("msr", rn=r, sysm=sysm))
                out.append(Instruction("mrs", rd=r, sysm=sysm))
    return out


def _universe():
    static, dynamic = [DATA_CANDIDATE], []
    for hw in range(0x10000):
        if is_wide_prefix(hw):
            continue
        ins = decode16(hw)
        if ins.op in ("undefined", "udf"):
            continue
        (dynamic if pc_dependent(ins) else static).append(ins)
    static.extend(_wide_candidates())
    return static, dynamic


_UNIVERSE = None


def candidate_universe() -> tuple[list[Instruction], list[Instruction]]:
    """(address-independent, address-dependent) candidates, ``bl`` excluded."""
    global _UNIVERSE
    if _UNIVERSE is None:
        _UNIVERSE = _universe()
    return _UNIVERSE


class EnumerationIndex:
    """Every candidate bucketed by its predicted observation on one state.

    Address-independent candidates are indexed once per input state (with
    pc normalised); address-dependent ones once per probe address. ``bl``
    is reconstructed from the observation instead of enumerated.
    """

    def __init__(self, predictor: Predictor):
        self.predictor = predictor
        self._static: dict = {}
        self._dynamic: dict = {}

    def _bucket(self, cands, state, addr):
        buckets: dict[tuple, list] = {}
        wild = []
        run = self.predictor.run
        for ins in cands:
            obs, mask = run(ins, state)
            if mask is not None:
                wild.append(ins)
            else:
                buckets.setdefault(normalize(obs, addr), []).append(ins)
        return buckets, wild

    def _tables(self, state: SystemState):
        addr = state.pc
        in_xom = self.predictor.mm.in_xom(addr)
        skey = (replace(state, pc=0).key, in_xom)
        static, dynamic = candidate_universe()
        if skey not in self._static:
            self._static[skey] = self._bucket(static, state, addr)
        dkey = (state.key, in_xom)
        if dkey not in self._dynamic:
            self._dynamic[dkey] = self._bucket(dynamic, state, addr)
        return self._static[skey], self._dynamic[dkey]

    def lookup(self, state: SystemState, obs: tuple) -> list[Instruction]:
        (sb, swild), (db, dwild) = self._tables(state)
        addr = state.pc
        norm = normalize(obs, addr)
        out = list(sb.get(norm, ())) + list(db.get(norm, ()))
        pred = self.predictor
        out.extend(ins for ins in swild + dwild if pred.matches(ins, state, obs))
        if pred.folding and obs == IRREGULAR:
            seen = set(out)
            for table in (sb, db):
                for bucket in table.values():
                    out.extend(i for i in bucket if foldable(i) and i not in seen)
        bl = self._branch_link(state, obs)
        if bl is not None:
            out.append(bl)
        return out

    def _branch_link(self, state, obs):
        if obs[0] != "ok":
            return None
        key = obs[1]
        lr = key[2]
        if lr != (state.pc + 4) | 1:
            return None
        offset = (key[_PC] - state.pc - 4) & M32
        if offset & 0x8000_0000:
            offset -= 1 << 32
        if offset & 1 or not -(1 << 24) <= offset < (1 << 24):
            return None
        ins = Instruction("bl", imm=offset)
        return ins if self.predictor.matches(ins, state, obs) else None
