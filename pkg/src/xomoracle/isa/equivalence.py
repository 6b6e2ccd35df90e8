"""Functional-alias and observational-ambiguity classes.

Two instructions share a *functional key* when they compute the same next
state from every input state. On top of that, a few groups are merely
indistinguishable to an observer of registers, flags, SRAM and cycle counts
(barriers, the nop family, the sleep hints), and the ``svc``/``bkpt``
immediates never reach the observable state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

from .instruction import (
    BARRIER_OPS, SYSM_NAMES, Instruction, all_16bit, decode16, encode,
)


class Classification(enum.Enum):
    UNIQUE = "Unique"
    FUNCTIONAL_ALIAS = "FunctionalAlias"
    INDISTINGUISHABLE = "Indistinguishable"
    IMMEDIATE_UNRECOVERABLE = "ImmediateUnrecoverable"
    DATA = "Data"


@dataclass(frozen=True)
class AmbiguityClass:
    classification: Classification
    members: frozenset[Instruction]
    representative: Instruction

    def __contains__(self, ins):
        return ins in self.members

    def __len__(self):
        return len(self.members)


_COMMUTATIVE_MEMORY = {"str_reg", "strh_reg", "strb_reg", "ldrsb_reg",
                       "ldr_reg", "ldrh_reg", "ldrb_reg", "ldrsh_reg"}

# groups that are observationally identical but not functionally so
NOP_GROUP = "nop"
BARRIER_GROUP = "barrier"
SLEEP_GROUP = "sleep"


def functional_key(ins: Instruction) -> tuple:
    """Key shared exactly by instructions with identical semantics."""
    op = ins.op
    if op in ("nop", "yield"):
        return ("nop",)
    if op == "mov_hi" and ins.rd == ins.rm and ins.rd != 15:
        return ("nop",)
    if op in ("add_sp_sp", "sub_sp_sp") and ins.imm == 0:
        return ("nop",)
    if op == "adds_reg":
        return ("adds", ins.rd, *sorted((ins.rn, ins.rm)))
    if op in ("adds_imm3", "adds_imm8"):
        rn = ins.rd if ins.rn is None else ins.rn
        return ("addsi", ins.rd, rn, ins.imm)
    if op in ("subs_imm3", "subs_imm8"):
        rn = ins.rd if ins.rn is None else ins.rn
        if rn == ins.rd and ins.imm == 0:
            return ("cmp0", rn)
        return ("subsi", ins.rd, rn, ins.imm)
    if op == "cmp_imm" and ins.imm == 0:
        return ("cmp0", ins.rn)
    if op == "subs_reg" and ins.rn == ins.rm:
        return ("subs_self", ins.rd)
    if op in ("ands", "orrs") and ins.rd == ins.rm:
        return ("test", ins.rd)
    if op == "lsls_imm" and ins.imm == 0 and ins.rd == ins.rm:
        return ("test", ins.rd)
    if op == "tst":
        if ins.rn == ins.rm:
            return ("test", ins.rn)
        return ("tst", *sorted((ins.rn, ins.rm)))
    if op in ("eors", "bics") and ins.rd == ins.rm:
        return ("clear", ins.rd)
    if op == "movs_imm" and ins.imm == 0:
        return ("clear", ins.rd)
    if op in ("cmp_reg", "cmp_hi"):
        if ins.rn == ins.rm:
            return ("cmp_self",)
        return ("cmp", ins.rn, ins.rm)
    if op == "cmn":
        return ("cmn", *sorted((ins.rn, ins.rm)))
    if op in _COMMUTATIVE_MEMORY:
        return (op, ins.rd, *sorted((ins.rn, ins.rm)))
    if op == "ldm" and ins.regs == 1 << ins.rn:
        return ("ldr_imm", ins.rn, ins.rn, 0)
    if op == "ldr_imm":
        return ("ldr_imm", ins.rd, ins.rn, ins.imm)
    if op == "add_sp_imm" and ins.imm == 0:
        return ("mov", ins.rd, 13)
    if op == "mov_hi":
        if ins.rd == 15 and ins.rm == 15:
            return ("b", 0)
        return ("mov", ins.rd, ins.rm)
    if op == "b":
        return ("b", ins.imm)
    if op == "msr":
        if ins.sysm < 4:
            return ("msr_apsr", ins.rn)
        return ("msr", ins.sysm, ins.rn)
    if op == "mrs":
        if ins.sysm < 8:
            if ins.sysm == 6:
                return ("mrs_zero", ins.rd)
            return ("mrs", ins.rd, ins.sysm & 5)
        return ("mrs", ins.rd, ins.sysm)
    if op == "undefined":
        return ("undefined", ins.raw)
    return (op, ins.rd, ins.rn, ins.rm, ins.imm, ins.regs, ins.cond, ins.sysm)


def observation_group(ins: Instruction):
    """Name of the indistinguishability group ``ins`` belongs to, if any."""
    if ins.op == "sev" or functional_key(ins) == ("nop",):
        return NOP_GROUP
    if ins.op in BARRIER_OPS:
        return BARRIER_GROUP
    if ins.op in ("wfe", "wfi"):
        return SLEEP_GROUP
    return None


def is_data(ins: Instruction) -> bool:
    """Encodings that fault unconditionally, whatever the input state."""
    return ins.op in ("undefined", "udf", "udf_w")


# ------------------------------------------------------------ class tables

def _preference(ins: Instruction) -> tuple:
    """Sort key picking the canonical member of a class."""
    order = {
        "nop": 0, "movs_imm": 0, "cmp_imm": 0, "adds_imm8": 0, "subs_imm8": 0,
        "tst": 0, "cmp_reg": 0, "b": 0, "ldr_imm": 0, "mov_hi": 1,
        "add_sp_imm": 2, "dmb": 0, "dsb": 1, "isb": 2, "wfi": 0, "wfe": 1,
    }
    # commutative operands in ascending register order, then lowest encoding
    swapped = ins.rn is not None and ins.rm is not None and ins.rn > ins.rm
    return (order.get(ins.op, 5), swapped, encode(ins).halfwords)


@lru_cache(maxsize=1)
def _sixteen_bit_table() -> dict[tuple, tuple[Instruction, ...]]:
    table: dict[tuple, list[Instruction]] = {}
    for ins in all_16bit():
        table.setdefault(functional_key(ins), []).append(ins)
    return {k: tuple(sorted(v, key=_preference)) for k, v in table.items()}


def _wide_members(key: tuple) -> tuple[Instruction, ...] | None:
    if key[0] == "msr_apsr":
        return tuple(Instruction("msr", rn=key[1], sysm=s) for s in range(4))
    if key[0] == "mrs" and key[2] < 8:
        return tuple(Instruction("mrs", rd=key[1], sysm=s) for s in (key[2], key[2] | 2))
    return None


def functional_members(ins: Instruction) -> tuple[Instruction, ...]:
    key = functional_key(ins)
    if ins.width == 4 or ins.op == "undefined":
        members = _wide_members(key)
        return members if members is not None else (ins,)
    return _sixteen_bit_table().get(key, (ins,))


def _group_members(group: str) -> tuple[Instruction, ...]:
    if group == NOP_GROUP:
        return _sixteen_bit_table()[("nop",)] + (decode16(0xBF40),)
    if group == BARRIER_GROUP:
        return tuple(Instruction(op, imm=0xF) for op in ("dmb", "dsb", "isb"))
    return (Instruction("wfi"), Instruction("wfe"))


def equivalence_class(ins: Instruction) -> AmbiguityClass:
    """The ambiguity class of ``ins`` with its full member set."""
    if is_data(ins):
        return AmbiguityClass(Classification.DATA, frozenset({ins}), ins)
    if ins.op in ("svc", "bkpt"):
        members = tuple(Instruction(ins.op, imm=i) for i in range(256))
        return AmbiguityClass(Classification.IMMEDIATE_UNRECOVERABLE,
                              frozenset(members), members[0])
    group = observation_group(ins)
    if group is not None:
        members = _group_members(group)
        return AmbiguityClass(Classification.INDISTINGUISHABLE,
                              frozenset(members), min(members, key=_preference))
    members = functional_members(ins)
    kind = Classification.UNIQUE if len(members) == 1 else Classification.FUNCTIONAL_ALIAS
    return AmbiguityClass(kind, frozenset(members), min(members, key=_preference))


def canonicalize(ins: Instruction) -> Instruction:
    """Fixed representative of the functional-alias class of ``ins``."""
    if is_data(ins) or ins.op in ("svc", "bkpt") or ins.op in BARRIER_OPS:
        return ins
    if ins.op == "sev":
        return ins
    return min(functional_members(ins), key=_preference)


def sysreg_name(sysm: int) -> str:
    return SYSM_NAMES[sysm]
