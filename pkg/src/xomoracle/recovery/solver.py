"""Generator, oracle and solver loop for single-instruction recovery."""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from ..device.model import DeviceModel, MemoryMap, ResponseKind
from ..isa.equivalence import (
    Classification, _preference, functional_key, is_data, observation_group,
)
from ..isa.instruction import DP_OPS, MEMORY_ACCESS, REGOFF_OPS, Instruction, encode, format_instruction
from ..isa.machine import M32, SystemState
from .predict import (
    DATA_CANDIDATE, INTERRUPT, IRREGULAR, SINGLE_STEP, EnumerationIndex, Predictor,
    known_flash, observation_from_response,
)
from .states import BAD_ADDRESS, flag_settings, initial_input_state

TICK_CAP = 16
MAX_ITERATIONS = 64


class RecoveryError(Exception):
    pass


class NoCandidates(RecoveryError):
    """No candidate explains an observation: the device and model disagree."""


class Unrecoverable(RecoveryError):
    """Probing is exhausted while candidates span several classes."""

    def __init__(self, message, residual=()):
        super().__init__(message)
        self.residual = tuple(residual)


class OracleUnavailable(RecoveryError):
    """The device policy does not support the chosen strategy."""


# ------------------------------------------------------------ candidate sets

@dataclass(frozen=True)
class CandidateSet:
    members: tuple[Instruction, ...]
    exhausted: bool = False
    notes: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __contains__(self, ins):
        return ins in self.members


_BRANCHES = frozenset({"b", "b_cond", "bx", "blx", "bl"})
_FLAG_SETTERS = frozenset({
    "lsls_imm", "lsrs_imm", "asrs_imm", "adds_reg", "subs_reg", "adds_imm3",
    "subs_imm3", "movs_imm", "cmp_imm", "adds_imm8", "subs_imm8", "cmp_hi",
    *DP_OPS,
})


def _sets_flags(ins: Instruction) -> bool:
    return ins.op in _FLAG_SETTERS or (ins.op == "msr" and ins.sysm < 8)


def _exception_ops(name: str):
    return {"svcall": {"svc"}, "breakpoint": {"bkpt"}}.get(name)


def pre_check(cands: CandidateSet, state: SystemState, obs: tuple) -> CandidateSet:
    """Drop candidates contradicted by cheap structural rules."""
    members = cands.members
    if obs[0] == "exc":
        only = _exception_ops(obs[1])
        if only is not None:
            members = [c for c in members if c.op in only]
        else:
            members = [c for c in members if c.op not in ("svc",) and
                       not (c.op == "bkpt" and obs[1] != "hardfault")]
    elif obs[0] == "ok":
        post = obs[1]
        regs, lr, pc, apsr = post[0], post[2], post[3], post[4]
        if (pc - state.pc) & M32 == 2 and lr == state.lr:
            members = [c for c in members if c.width == 2]
        if regs[0] != state.regs[0]:
            members = [c for c in members if c.op not in _BRANCHES]
        if apsr != state.apsr:
            members = [c for c in members if _sets_flags(c)]
    return replace(cands, members=tuple(members))


def enumerate_candidates(index: EnumerationIndex, state: SystemState, obs: tuple) -> CandidateSet:
    """Every encoding whose predicted outcome on ``state`` equals ``obs``."""
    found = index.lookup(state, obs)
    if not found:
        raise NoCandidates(f"no instruction explains the observation at {state.pc:#x}")
    return CandidateSet(tuple(found))


def verify(cands: CandidateSet, predictor: Predictor, state: SystemState, obs: tuple) -> CandidateSet:
    kept = tuple(c for c in cands if predictor.matches(c, state, obs))
    if not kept:
        raise NoCandidates(f"every candidate contradicts the observation at {state.pc:#x}")
    return replace(cands, members=kept)


# ------------------------------------------------------------ ambiguity groups

class Context:
    """Per-target facts the grouping needs: address, memory, learned literals."""

    def __init__(self, predictor: Predictor, addr: int, history=()):
        self.predictor = predictor
        self.addr = addr
        self.history = history

    def literal(self, ins: Instruction):
        """``(value, from_xom)`` loaded by a pc-relative load, ``None`` if it faults."""
        mm: MemoryMap = self.predictor.mm
        lit = ((self.addr + 4) & ~3) + ins.imm
        faddr = mm.flash_address(lit)
        if faddr is None:
            return None
        if mm.in_xom(faddr) or mm.in_xom(faddr + 3):
            if not (mm.in_xom(self.addr) and mm.xom_load_allowed(True, 0, False)):
                return None
            for _, obs in self.history:
                if obs[0] == "ok":
                    return obs[1][0][ins.rd], True
            return None, True
        off = faddr - mm.flash_base
        return int.from_bytes(self.predictor.flash[off:off + 4], "little"), False

    def group_key(self, ins: Instruction) -> tuple:
        if ins is DATA_CANDIDATE or is_data(ins):
            return ("data",)
        if ins.op == "bkpt":
            return ("data",) if self.predictor.interrupt else ("bkpt",)
        if ins.op == "svc":
            return ("svc",)
        group = observation_group(ins)
        if group is not None:
            return ("obs", group)
        if ins.op == "ldr_lit":
            lit = self.literal(ins)
            if lit is None:
                return ("data",)
            return ("val", ins.rd, lit[0])
        if ins.op == "adr":
            return ("val", ins.rd, ((self.addr + 4) & ~3) + ins.imm)
        if ins.op == "mov_hi" and ins.rm == 15 and ins.rd != 15:
            return ("val", ins.rd, self.addr + 4)
        if ins.op == "mrs" and self.predictor.interrupt:
            # an observable interrupt needs thread mode and PRIMASK clear, so
            # the IPSR field and PRIMASK always read 0
            if ins.sysm < 8:
                return ("mrs_psr", ins.rd, ins.sysm & 4)
            if ins.sysm == 16:
                return ("mrs_psr", ins.rd, 4)
        return ("fn", functional_key(ins))

    def groups(self, cands) -> dict:
        out: dict[tuple, list] = {}
        for c in cands:
            out.setdefault(self.group_key(c), []).append(c)
        return out


# ------------------------------------------------------------ generator

def _mem_bases(cands) -> tuple[list[int], list[int]]:
    rn, rm = set(), set()
    for c in cands:
        if c.op in MEMORY_ACCESS and c.op not in ("ldr_lit", "str_sp", "ldr_sp"):
            rn.add(c.rn)
            if c.op in REGOFF_OPS:
                rm.add(c.rm)
        elif c.op in ("ldm", "stm"):
            rn.add(c.rn)
    return sorted(r for r in rn if r is not None), sorted(r for r in rm if r is not None)


class Generator:
    """Proposes the next input state from a fixed sequence of tactics."""

    RANDOM_ROUNDS = 6
    RANDOM_PER_ROUND = 16

    def __init__(self, predictor: Predictor, mm: MemoryMap, seed: int = 0):
        self.predictor = predictor
        self.mm = mm
        self.seed = seed
        specs = {g: initial_input_state(g) for g in ("memory", "push-pop", "branch")}
        self._base = {g: s.to_state(0, mm.sram_base, mm.sram_size) for g, s in specs.items()}

    def base_state(self, group: str, addr: int) -> SystemState:
        return replace(self._base[group], pc=addr)

    # each tactic yields candidate probe states
    def _perturb(self, cands, addr):
        base = self.base_state("memory", addr)
        rn, rm = _mem_bases(cands)
        if rn:
            yield base.with_regs(**{f"r{r}": base.reg(r) + 4 * k for k, r in enumerate(rn)})
        if rm:
            yield base.with_regs(**{f"r{r}": base.reg(r) + 4 * k for k, r in enumerate(rm)})
            both = sorted(set(rn) | set(rm))
            yield base.with_regs(**{f"r{r}": base.reg(r) + 4 * k for k, r in enumerate(both)})

    def _pc_relative(self, cands, addr):
        if any(c.op == "ldr_lit" for c in cands):
            rn, rm = _mem_bases(cands)
            base = self.base_state("memory", addr)
            if rn:
                yield base.with_regs(**{f"r{r}": BAD_ADDRESS for r in rn})
            yield replace(self.base_state("memory", addr),
                          regs=(BAD_ADDRESS,) * 8 + base.regs[8:])

    def _flags(self, cands, addr):
        for g in ("memory", "branch"):
            base = self.base_state(g, addr)
            for f in flag_settings():
                if f != base.apsr:
                    yield replace(base, apsr=f)

    def _stack_states(self, cands, addr):
        yield self.base_state("push-pop", addr)
        yield self.base_state("branch", addr)

    def _sram_variants(self, cands, addr):
        base = self.base_state("memory", addr)
        yield replace(base, sram=bytes(b ^ 0x80 for b in base.sram))
        yield replace(base, sram=bytes(b ^ 0xFF for b in base.sram))

    def _special(self, cands, addr):
        base = self.base_state("memory", addr)
        single = not self.predictor.interrupt
        yield replace(base, primask=1)
        yield replace(base, control=2, sp=base.sp_alt, sp_alt=base.sp)
        yield replace(base, sp_alt=(base.sp_alt + 0x100) & ~3)
        if single:
            yield replace(base, ipsr=3)
            yield replace(base, ipsr=0x2F, apsr=flag_settings()[5])

    def _values(self, cands, addr):
        base = self.base_state("memory", addr)
        patterns = (
            [0x8000_0001 + 0x0101_0100 * i for i in range(13)],
            [4 * i + 1 for i in range(13)],
            [(0xFFFF_FFF0 + i) & M32 for i in range(13)],
            [0x7FFF_FFF0 + 0x11 * i for i in range(13)],
            [(0x0000_8000 + 0x10 * i) | ((0x80 + i) << 16) for i in range(13)],
        )
        for vals in patterns:
            for f in (0, flag_settings()[2], flag_settings()[5]):
                yield replace(base, regs=tuple(v & M32 for v in vals), apsr=f)

    def _thresholds(self, cands, addr):
        # flag-only candidates (cmp rX, #imm) split when registers sit
        # between their immediates
        imms = sorted({c.imm for c in cands if c.op in ("cmp_imm", "cmp_reg", "cmn", "tst")
                       and c.imm is not None})
        if not imms:
            return
        if len(imms) > 16:
            imms = [imms[i * len(imms) // 16] for i in range(16)]
        base = self.base_state("memory", addr)
        for t in imms:
            yield replace(base, regs=(t,) * 13)
        for k in range(len(imms)):
            yield replace(base, regs=tuple(imms[(i + k) % len(imms)] for i in range(13)))

    def _offsets(self, cands, addr):
        # any two distinct registers differ in one index bit, so one of these
        # arrangements makes rn a pointer and rm a small offset
        base = self.base_state("memory", addr)
        ptr = [self.mm.sram_base + 0x200 + 0x40 * i for i in range(13)]
        off = [0x10 + 4 * i for i in range(13)]
        for bit in (1, 2, 4):
            for polarity in (0, 1):
                regs = tuple(ptr[i] if bool(i & bit) == polarity else off[i] for i in range(13))
                yield replace(base, regs=regs)
        yield replace(base, regs=tuple(p >> 1 for p in ptr))
        # rX+rX inside the first 256 ID bytes, where even single bytes differ
        half = replace(base, regs=tuple((self.mm.sram_base + 8 + 0x10 * i) >> 1 for i in range(13)))
        yield half
        # same with bit 7 set in every byte, which separates signed from unsigned
        yield replace(half, sram=bytes(b ^ 0x80 for b in half.sram))

    def _random(self, cands, addr, round_no):
        rng = random.Random(hash((self.seed, addr, round_no)) & M32)
        mm = self.mm
        base = self.base_state("memory", addr)
        for _ in range(self.RANDOM_PER_ROUND):
            # pointers, small offsets and noise, so base+offset pairs land in SRAM
            regs = []
            for _ in range(13):
                kind = rng.randrange(3)
                if kind == 0:
                    regs.append((mm.sram_base + rng.randrange(0x40, mm.sram_size - 0x440)) & ~3)
                elif kind == 1:
                    regs.append(rng.randrange(0, 0x200))
                else:
                    regs.append(rng.getrandbits(32))
            sp = (mm.sram_base + rng.randrange(0x400, mm.sram_size - 0x400)) & ~7
            sram = rng.randbytes(mm.sram_size)
            yield replace(base, regs=tuple(regs), sp=sp, lr=rng.getrandbits(32),
                          apsr=rng.getrandbits(4) << 28, sram=sram)

    def tactics(self, cands, addr):
        yield "perturb", self._perturb(cands, addr)
        yield "pc-relative", self._pc_relative(cands, addr)
        yield "flags", self._flags(cands, addr)
        yield "thresholds", self._thresholds(cands, addr)
        yield "push-pop/branch", self._stack_states(cands, addr)
        yield "sram", self._sram_variants(cands, addr)
        yield "special", self._special(cands, addr)
        yield "values", self._values(cands, addr)
        yield "offsets", self._offsets(cands, addr)
        for r in range(self.RANDOM_ROUNDS):
            yield "random", self._random(cands, addr, r)

    def split(self, cands, state) -> int:
        """Number of distinct predicted observations over ``cands``."""
        run = self.predictor.run
        return len({run(c, state)[0] for c in cands})

    def next_state(self, cands: CandidateSet, history) -> tuple[SystemState | None, str | None]:
        """First tactic that splits ``cands``; within it, the widest split."""
        addr = history[0][0].pc
        used = {s.key for s, _ in history}
        for name, states in self.tactics(cands.members, addr):
            best, best_n = None, 1
            for s in states:
                if s.key in used:
                    continue
                n = self.split(cands.members, s)
                if n > best_n:
                    best, best_n = s, n
            if best is not None:
                return best, name
        return None, None


def generate_next_state(generator: Generator, cands: CandidateSet, history):
    """The next splitting probe, or ``None`` when the set cannot be split."""
    return generator.next_state(cands, history)[0]


# ------------------------------------------------------------ oracle

class Oracle:
    """Runs one probe on the device and reduces the response."""

    def __init__(self, dev, strategy: str, predictor: Predictor):
        self.dev = dev
        self.strategy = strategy
        self.predictor = predictor
        self.queries = 0

    def probe(self, state: SystemState, cands=None) -> tuple:
        dev = self.dev
        addr = state.pc
        if self.strategy == SINGLE_STEP:
            dev.apply_state(state)
            self.queries += 1
            resp = dev.single_step(addr)
            if resp.kind is ResponseKind.STEP_DENIED:
                raise OracleUnavailable(f"single-stepping at {addr:#x} is denied by the device")
            return observation_from_response(resp, SINGLE_STEP)
        tick = 1
        if cands:
            tick = max(1, min(self.predictor.cycles(c, state) for c in cands))
        while tick <= TICK_CAP:
            dev.apply_state(state)
            self.queries += 1
            resp = dev.run_until_interrupt(addr, tick, guard=64)
            if not (resp.kind is ResponseKind.INTERRUPT_TAKEN and resp.retired == 0):
                return observation_from_response(resp, INTERRUPT, tick)
            tick += 1
        raise Unrecoverable(f"no tick up to {TICK_CAP} retires the instruction at {addr:#x}")


# ------------------------------------------------------------ results

@dataclass(frozen=True)
class RecoveredInstruction:
    address: int
    instruction: Instruction | None
    classification: Classification | None
    alternates: tuple[Instruction, ...] = ()
    width: int = 2
    iterations: int = 0
    queries: int = 0
    faults: int = 0
    literal: int | None = None
    error: str | None = None
    residual: tuple[Instruction, ...] = ()

    @property
    def members(self) -> frozenset:
        if self.instruction is None:
            return frozenset()
        return frozenset((self.instruction, *self.alternates))

    @property
    def encoding(self) -> str | None:
        if self.classification is Classification.UNIQUE:
            return str(encode(self.instruction))
        return None

    @property
    def text(self) -> str:
        if self.error:
            return f"<{self.error}>"
        ins = self.instruction
        if self.classification is Classification.DATA:
            return ".data"
        if ins.op == "ldr_lit" and self.literal is not None and \
                self.classification is Classification.IMMEDIATE_UNRECOVERABLE:
            return f"ldr {('r%d' % ins.rd)}, =0x{self.literal:08x}"
        if ins.op in ("svc", "bkpt") and self.classification is Classification.IMMEDIATE_UNRECOVERABLE:
            return f"{ins.op} #?"
        return format_instruction(ins, self.address)

    def to_json(self) -> dict:
        def fmt(i):
            return ".data" if i is DATA_CANDIDATE else format_instruction(i, self.address)
        return {
            "address": f"0x{self.address:08x}",
            "encoding": self.encoding,
            "text": self.text,
            "class": self.classification.value if self.classification else None,
            "alternates": [fmt(a) for a in self.alternates],
            "width": self.width,
            "iterations": self.iterations,
            "queries": self.queries,
            "faults": self.faults,
            "literal": None if self.literal is None else f"0x{self.literal:08x}",
            "error": self.error,
            "residual": [fmt(a) for a in self.residual],
        }


def _sorted(members):
    return sorted(members, key=lambda i: (0, ()) if i is DATA_CANDIDATE else (1, _preference(i)))


def classify(ctx: Context, cands: CandidateSet):
    """(classification, representative, alternates, literal) of a settled set."""
    groups = ctx.groups(cands)
    (key, members), = groups.items()
    members = _sorted(members)
    rep, rest = members[0], tuple(members[1:])
    literal = None
    kind = key[0]
    if kind == "data":
        return Classification.DATA, rep, rest, None
    if kind in ("svc", "bkpt"):
        rep = Instruction(kind, imm=0)
        alts = tuple(Instruction(kind, imm=i) for i in range(1, 256))
        return Classification.IMMEDIATE_UNRECOVERABLE, rep, alts, None
    if kind == "obs":
        return Classification.INDISTINGUISHABLE, rep, rest, None
    if kind == "mrs_psr" and len({functional_key(m) for m in members}) > 1:
        return Classification.INDISTINGUISHABLE, rep, rest, None
    if kind == "val":
        lits = [ctx.literal(m) for m in members if m.op == "ldr_lit"]
        if any(lit is not None and lit[1] for lit in lits):
            literal = key[2]
            lit_members = [m for m in members if m.op == "ldr_lit"]
            rep = lit_members[0]
            rest = tuple(m for m in members if m is not rep)
            return Classification.IMMEDIATE_UNRECOVERABLE, rep, rest, literal
    if not rest:
        return Classification.UNIQUE, rep, (), None
    return Classification.FUNCTIONAL_ALIAS, rep, rest, None


# ------------------------------------------------------------ the loop

@dataclass
class _Node:
    cands: CandidateSet
    state: SystemState | None = None  # next probe; None once settled
    tactic: str | None = None
    settled: bool = False


class Solver:
    """One recovery session against one device.

    Results of every (address, observation history) step are memoised, so
    sweeping many targets at the same address reuses earlier decisions.
    """

    def __init__(self, dev, strategy: str = SINGLE_STEP, *, memory_map: MemoryMap | None = None,
                 flash: bytes | None = None, seed: int = 0, max_iterations: int = MAX_ITERATIONS,
                 trace=None):
        if strategy not in (SINGLE_STEP, INTERRUPT):
            raise ValueError(f"unknown strategy {strategy!r}")
        self.dev = dev
        self.strategy = strategy
        mm = memory_map if memory_map is not None else dev.memory_map
        if flash is None:
            flash = known_flash(mm, dev.readable_flash())
        self.mm = mm
        self.predictor = Predictor(mm, flash, strategy)
        self.index = EnumerationIndex(self.predictor)
        self.generator = Generator(self.predictor, mm, seed)
        self.oracle = Oracle(dev, strategy, self.predictor)
        self.max_iterations = max_iterations
        self.trace = trace
        self._tree: dict = {}

    def use_device(self, dev) -> None:
        """Point the session at another device with the same public memory.

        Caches stay valid as long as the readable flash is unchanged.
        """
        self.dev = dev
        self.oracle.dev = dev

    def initial_state(self, addr: int) -> SystemState:
        return self.generator.base_state("memory", addr)

    def _advance(self, addr, history, node_prev):
        state, obs = history[-1]
        if node_prev is None:
            cands = enumerate_candidates(self.index, state, obs)
        else:
            cands = pre_check(node_prev.cands, state, obs)
            cands = verify(cands, self.predictor, state, obs)
        ctx = Context(self.predictor, addr, history)
        if len(ctx.groups(cands)) == 1:
            return _Node(cands, settled=True)
        nxt, tactic = self.generator.next_state(cands, history)
        if nxt is None:
            return _Node(replace(cands, exhausted=True), settled=True)
        return _Node(cands, nxt, tactic)

    def recover(self, addr: int) -> RecoveredInstruction:
        if addr & 1:
            raise ValueError("instruction addresses are halfword aligned")
        q0 = self.oracle.queries
        state = self.initial_state(addr)
        history: list = []
        node = None
        faults = 0
        for _ in range(self.max_iterations):
            obs = self.oracle.probe(state, node.cands.members if node else None)
            if obs[0] in ("exc", "lockup"):
                faults += 1
            history.append((state, obs))
            key = (addr, tuple(o for _, o in history))
            cached = self._tree.get(key)
            if cached is None:
                cached = self._tree[key] = self._advance(addr, history, node)
            if self.trace is not None:
                self.trace(len(history), state, obs, cached)
            node = cached
            if node.settled:
                break
            state = node.state
        else:
            raise Unrecoverable(f"no settlement after {self.max_iterations} probes at {addr:#x}",
                                node.cands.members)
        ctx = Context(self.predictor, addr, history)
        if len(ctx.groups(node.cands)) != 1:
            raise Unrecoverable(
                f"{len(node.cands)} candidates in {len(ctx.groups(node.cands))} classes "
                f"remain at {addr:#x}", node.cands.members)
        kind, rep, alts, literal = classify(ctx, node.cands)
        return RecoveredInstruction(
            addr, rep, kind, alts, rep.width, len(history), self.oracle.queries - q0,
            faults, literal)


def recover_instruction(dev, addr: int, strategy: str = SINGLE_STEP, **kwargs) -> RecoveredInstruction:
    """Recover the instruction at ``addr``; see :class:`Solver`."""
    return Solver(dev, strategy, **kwargs).recover(addr)
