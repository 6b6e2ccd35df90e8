"""Read-out gadgets inside recovered XOM listings.

A gadget is a straight run of recovered instructions ending in a regular
(non pc-relative) load. Which runs qualify depends on the device flaw:

``BareLoad``
    the load alone (every load inside XOM may read XOM)
``PrecededLoad``
    the load after ``preceding`` retired non-loads inside XOM
``UnlockThenLoad``
    a half-word or wider store that writes the unlock key, then the load
``ItcmAlias``
    no code at all; the debug port reads XOM through an alias window
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..device.model import DeviceModel, DevicePolicy, LoadPolicy
from ..device.presets import PRESETS
from ..isa.equivalence import Classification
from ..isa.instruction import MEMORY_ACCESS, Instruction, format_instruction


class ExploitError(Exception):
    pass


class NoGadget(ExploitError):
    pass


class GadgetKind(enum.Enum):
    BARE_LOAD = "BareLoad"
    PRECEDED_LOAD = "PrecededLoad"
    UNLOCK_THEN_LOAD = "UnlockThenLoad"
    ITCM_ALIAS = "ItcmAlias"


_USABLE = (Classification.UNIQUE, Classification.FUNCTIONAL_ALIAS,
           Classification.INDISTINGUISHABLE)

_CONTROL_FLOW = frozenset({
    "b", "b_cond", "bl", "bx", "blx", "svc", "bkpt", "udf", "udf_w", "undefined",
    "data", "cpsid", "cpsie", "wfi", "wfe",
})


@dataclass(frozen=True)
class Gadget:
    kind: GadgetKind
    addresses: tuple[int, ...] = ()
    instructions: tuple[Instruction, ...] = ()
    base_registers: tuple[int, ...] = ()
    destination_registers: tuple[int, ...] = ()
    preceding: int = 0
    offset: int = 0                 # immediate added to the load base
    access_size: int = 4            # bytes produced per execution
    signed: bool = False
    store_index: int | None = None  # UnlockThenLoad: position of the key store

    @property
    def entry(self) -> int:
        return self.addresses[0]

    @property
    def load(self) -> Instruction:
        return self.instructions[-1]

    def describe(self) -> str:
        if self.kind is GadgetKind.ITCM_ALIAS:
            return "ItcmAlias"
        body = "; ".join(format_instruction(i, a) for i, a in zip(self.instructions, self.addresses))
        extra = f"(count={self.preceding})" if self.kind is GadgetKind.PRECEDED_LOAD else ""
        return f"{self.kind.value}{extra} @ {self.entry:#010x}: {body}"

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "addresses": [f"0x{a:08x}" for a in self.addresses],
            "instructions": [format_instruction(i, a) for i, a in zip(self.instructions, self.addresses)],
            "base_registers": list(self.base_registers),
            "destination_registers": list(self.destination_registers),
            "preceding": self.preceding,
            "offset": self.offset,
            "access_size": self.access_size,
        }


@dataclass(frozen=True)
class GadgetRules:
    """What a device accepts as a read-out gadget."""
    kind: GadgetKind | None
    preceding: int = 0
    alias: bool = False
    notes: list[str] = field(default_factory=list, compare=False)


def rules_for(device_kind) -> GadgetRules:
    """Gadget rules from a device, a policy or a preset name."""
    if isinstance(device_kind, DeviceModel):
        policy = device_kind.policy
    elif isinstance(device_kind, DevicePolicy):
        policy = device_kind
    elif isinstance(device_kind, str) and device_kind in PRESETS:
        policy = PRESETS[device_kind].policy
    else:
        raise ValueError(f"unknown device kind {device_kind!r}")
    alias = policy.itcm_alias is not None
    lp = policy.xom_load_policy
    if lp is LoadPolicy.ALL_LOADS:
        n = policy.preceding_non_loads
        return GadgetRules(GadgetKind.PRECEDED_LOAD if n else GadgetKind.BARE_LOAD, n, alias)
    if lp is LoadPolicy.UNLOCKABLE:
        return GadgetRules(GadgetKind.UNLOCK_THEN_LOAD, 0, alias)
    return GadgetRules(None, 0, alias)


# ------------------------------------------------------------ shape tests


def _load_signature(ins: Instruction):
    op = ins.op
    if op == "ldm":
        return ("ldm", ins.rn, ins.regs)
    acc = MEMORY_ACCESS.get(op)
    if acc is None or not acc[1] or op in ("ldr_lit", "ldr_sp"):
        return None
    size = acc[0]
    signed = op.startswith("ldrs")
    if op.endswith("_reg"):
        # base and index commute
        return ("reg", size, signed, ins.rd, frozenset((ins.rn, ins.rm)))
    return ("imm", size, signed, ins.rd, ins.rn, ins.imm)


def _store_signature(ins: Instruction):
    acc = MEMORY_ACCESS.get(ins.op)
    if acc is None or acc[1] or acc[0] < 2 or ins.op == "str_sp":
        return None
    if ins.op.endswith("_reg"):
        return ("reg", acc[0], ins.rd, frozenset((ins.rn, ins.rm)))
    return ("imm", acc[0], ins.rd, ins.rn, ins.imm)


def _usable(entry) -> bool:
    return (entry is not None and not entry.error and entry.instruction is not None
            and entry.classification in _USABLE)


def _uniform(entry, sig) -> bool:
    """Every member of the entry's class has the same signature."""
    if not _usable(entry):
        return False
    sigs = {sig(m) for m in entry.members}
    return len(sigs) == 1 and None not in sigs


def entry_load(entry) -> Instruction | None:
    return entry.instruction if _uniform(entry, _load_signature) else None


def entry_store(entry) -> Instruction | None:
    return entry.instruction if _uniform(entry, _store_signature) else None


def _plain(ins: Instruction) -> bool:
    """A non-load, non-store that falls through to the next instruction."""
    op = ins.op
    if op in _CONTROL_FLOW or op in MEMORY_ACCESS or op in ("ldm", "stm", "push", "pop"):
        return False
    if op in ("add_hi", "mov_hi") and ins.rd == 15:
        return False
    if op == "msr":
        return False
    return True


def entry_plain(entry) -> Instruction | None:
    if not _usable(entry):
        return None
    return entry.instruction if all(_plain(m) for m in entry.members) else None


def _make_load_gadget(kind, entries, preceding, store_index=None) -> Gadget:
    load = entries[-1].instruction
    sig = _load_signature(load)
    if sig[0] == "ldm":
        dests = tuple(i for i in range(8) if load.regs >> i & 1)
        size, signed, offset, bases = 4 * len(dests), False, 0, (load.rn,)
    else:
        size, signed, dests = sig[1], sig[2], (load.rd,)
        bases = (load.rn, load.rm) if sig[0] == "reg" else (load.rn,)
        offset = 0 if sig[0] == "reg" else load.imm
    if store_index is not None:
        store = entries[store_index].instruction
        bases = (store.rn, *bases)
    return Gadget(kind, tuple(e.address for e in entries), tuple(e.instruction for e in entries),
                  bases, dests, preceding, offset, size, signed, store_index)


def candidate_gadgets(listing, device_kind):
    """Every gadget in ``listing`` matching the device's rules, by address."""
    rules = rules_for(device_kind)
    if rules.kind is None:
        return
    entries = list(listing.entries)
    for i, e in enumerate(entries):
        load = entry_load(e)
        if load is None:
            continue
        if rules.kind is GadgetKind.BARE_LOAD:
            yield _make_load_gadget(GadgetKind.BARE_LOAD, [e], 0)
        elif rules.kind is GadgetKind.PRECEDED_LOAD:
            n = rules.preceding
            run = entries[i - n:i] if i >= n else None
            if run is not None and all(entry_plain(p) for p in run) and _contiguous(run + [e]):
                yield _make_load_gadget(GadgetKind.PRECEDED_LOAD, run + [e], n)
        else:
            # the key store, then any plain instructions, then the load
            j = i - 1
            while j >= 0 and entry_plain(entries[j]) is not None:
                j -= 1
            if j < 0:
                continue
            for k in range(j, i):
                store = entry_store(entries[k])
                if store is None:
                    continue
                run = entries[k:i + 1]
                if not _contiguous(run) or not _unlock_shape(store, load):
                    continue
                yield _make_load_gadget(GadgetKind.UNLOCK_THEN_LOAD, run, 0, 0)
                break


def _contiguous(entries) -> bool:
    return all(a.address + a.width == b.address for a, b in zip(entries, entries[1:]))


def _unlock_shape(store: Instruction, load: Instruction) -> bool:
    """Store and load bases distinct; no destination is a base register."""
    lsig = _load_signature(load)
    load_bases = {load.rn} | ({load.rm} if lsig[0] == "reg" else set())
    store_bases = {store.rn} | ({store.rm} if store.op.endswith("_reg") else set())
    if store.rd in store_bases or store_bases & load_bases or store.rd in load_bases:
        return False
    dests = {i for i in range(8) if load.regs >> i & 1} if lsig[0] == "ldm" else {load.rd}
    return not dests & (store_bases | load_bases)


def find_load_gadget(listing, device_kind) -> Gadget:
    """The lowest-address gadget the device's flaw admits."""
    for g in candidate_gadgets(listing, device_kind):
        return g
    rules = rules_for(device_kind)
    if rules.kind is None:
        raise NoGadget("the device does not let code inside XOM load XOM data")
    raise NoGadget(f"no {rules.kind.value} gadget in {listing.start:#x}-{listing.end:#x}")
