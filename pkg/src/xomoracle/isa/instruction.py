"""ARMv6-M instruction model: encodings, decoding, encoding and UAL text.

Every 16-bit halfword decodes to exactly one :class:`Instruction`; halfwords
that are unallocated or UNPREDICTABLE decode to an ``undefined`` instruction
instead of raising, so callers can sweep the full 65,536-entry space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

REG_NAMES = ("r0", "r1", "r2", "r3", "r4", "r5", "r6", "r7", "r8", "r9",
             "r10", "r11", "r12", "sp", "lr", "pc")
SP, LR, PC = 13, 14, 15

COND_NAMES = ("eq", "ne", "cs", "cc", "mi", "pl", "vs", "vc",
              "hi", "ls", "ge", "lt", "gt", "le")

SYSM_NAMES = {0: "apsr", 1: "iapsr", 2: "eapsr", 3: "xpsr", 5: "ipsr",
              6: "epsr", 7: "iepsr", 8: "msp", 9: "psp", 16: "primask",
              20: "control"}

# 010000 xxxx data-processing opcodes, in encoding order
DP_OPS = ("ands", "eors", "lsls_reg", "lsrs_reg", "asrs_reg", "adcs", "sbcs",
          "rors", "tst", "rsbs", "cmp_reg", "cmn", "orrs", "muls", "bics",
          "mvns")
REGOFF_OPS = ("str_reg", "strh_reg", "strb_reg", "ldrsb_reg", "ldr_reg",
              "ldrh_reg", "ldrb_reg", "ldrsh_reg")
HINT_OPS = ("nop", "yield", "wfe", "wfi", "sev")
EXTEND_OPS = ("sxth", "sxtb", "uxth", "uxtb")
BARRIER_OPS = ("dsb", "dmb", "isb")

# writes to the execution and exception fields are treated as unallocated
MSR_READ_ONLY = frozenset({5, 6, 7})

WIDE_OPS = frozenset({"bl", "msr", "mrs", "dmb", "dsb", "isb", "udf_w"})

# op -> (transfer size, is_load) for single-register memory instructions
MEMORY_ACCESS = {
    "str_reg": (4, False), "strh_reg": (2, False), "strb_reg": (1, False),
    "ldrsb_reg": (1, True), "ldr_reg": (4, True), "ldrh_reg": (2, True),
    "ldrb_reg": (1, True), "ldrsh_reg": (2, True),
    "str_imm": (4, False), "ldr_imm": (4, True), "strb_imm": (1, False),
    "ldrb_imm": (1, True), "strh_imm": (2, False), "ldrh_imm": (2, True),
    "str_sp": (4, False), "ldr_sp": (4, True), "ldr_lit": (4, True),
}


class UndefinedEncoding(Exception):
    """Raised by callers that require an allocated encoding."""


class NotEncodable(ValueError):
    """Operand combination outside the ranges of every encoding."""


@dataclass(frozen=True)
class Encoding:
    halfwords: tuple[int, ...]

    def __post_init__(self):
        hws = tuple(int(h) for h in self.halfwords)
        object.__setattr__(self, "halfwords", hws)
        if not 1 <= len(hws) <= 2 or any(not 0 <= h <= 0xFFFF for h in hws):
            raise ValueError(f"bad halfwords {hws!r}")
        if is_wide_prefix(hws[0]) != (len(hws) == 2):
            raise ValueError(f"halfword count does not match prefix: {hws!r}")

    @property
    def width(self) -> int:
        return 2 * len(self.halfwords)

    def to_bytes(self) -> bytes:
        return b"".join(h.to_bytes(2, "little") for h in self.halfwords)

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0) -> "Encoding":
        first = int.from_bytes(data[offset:offset + 2], "little")
        if is_wide_prefix(first):
            second = int.from_bytes(data[offset + 2:offset + 4], "little")
            return cls((first, second))
        return cls((first,))

    def __str__(self):
        return " ".join(f"{h:04x}" for h in self.halfwords)


def is_wide_prefix(hw: int) -> bool:
    return (hw >> 11) in (0b11101, 0b11110, 0b11111)


@dataclass(frozen=True)
class Instruction:
    """A decoded instruction.

    ``op`` names the encoding form (``adds_imm3`` vs ``adds_imm8``), so the
    exact encoding is recoverable. ``rd`` doubles as ``rt`` for memory
    instructions. ``imm`` is always the architectural value: byte offsets
    for memory forms, a signed byte offset from ``pc + 4`` for branches.
    """

    op: str
    rd: int | None = None
    rn: int | None = None
    rm: int | None = None
    imm: int | None = None
    regs: int | None = None
    cond: int | None = None
    sysm: int | None = None
    raw: tuple[int, ...] | None = field(default=None, compare=True)

    @property
    def width(self) -> int:
        if self.op == "undefined":
            return 2 * len(self.raw)
        return 4 if self.op in WIDE_OPS else 2

    @property
    def mnemonic(self) -> str:
        if self.op == "b_cond":
            return "b" + COND_NAMES[self.cond]
        if self.op == "lsls_imm" and self.imm == 0:
            return "movs"
        return _MNEMONIC.get(self.op, self.op)

    @property
    def is_undefined(self) -> bool:
        return self.op == "undefined"

    def __str__(self):
        return format_instruction(self)

    def __repr__(self):
        return f"<{format_instruction(self)}>" if self.op != "data" else "<data>"


_MNEMONIC = {
    "lsls_imm": "lsls", "lsrs_imm": "lsrs", "asrs_imm": "asrs",
    "adds_reg": "adds", "subs_reg": "subs", "adds_imm3": "adds",
    "subs_imm3": "subs", "movs_imm": "movs", "cmp_imm": "cmp",
    "adds_imm8": "adds", "subs_imm8": "subs", "lsls_reg": "lsls",
    "lsrs_reg": "lsrs", "asrs_reg": "asrs", "cmp_reg": "cmp",
    "add_hi": "add", "cmp_hi": "cmp", "mov_hi": "mov", "ldr_lit": "ldr",
    "str_reg": "str", "strh_reg": "strh", "strb_reg": "strb",
    "ldrsb_reg": "ldrsb", "ldr_reg": "ldr", "ldrh_reg": "ldrh",
    "ldrb_reg": "ldrb", "ldrsh_reg": "ldrsh", "str_imm": "str",
    "ldr_imm": "ldr", "strb_imm": "strb", "ldrb_imm": "ldrb",
    "strh_imm": "strh", "ldrh_imm": "ldrh", "str_sp": "str", "ldr_sp": "ldr",
    "add_sp_imm": "add", "add_sp_sp": "add", "sub_sp_sp": "sub",
    "udf_w": "udf.w", "undefined": ".inst",
}


def _sext(value: int, bits: int) -> int:
    sign = 1 << (bits - 1)
    return (value & (sign - 1)) - (value & sign)


def _undef(*hws: int) -> Instruction:
    return Instruction("undefined", raw=tuple(hws))


# ---------------------------------------------------------------- decoding

def decode(enc: Encoding | int | tuple[int, ...], strict: bool = False) -> Instruction:
    """Decode an encoding.

    Unallocated or UNPREDICTABLE patterns give an ``undefined`` instruction,
    or raise ``UndefinedEncoding`` when ``strict`` is set.
    """
    if isinstance(enc, int):
        enc = Encoding((enc,))
    elif not isinstance(enc, Encoding):
        enc = Encoding(tuple(enc))
    if len(enc.halfwords) == 1:
        ins = decode16(enc.halfwords[0])
    else:
        ins = decode32(*enc.halfwords)
    if strict and ins.op == "undefined":
        raise UndefinedEncoding(str(enc))
    return ins


def decode16(hw: int) -> Instruction:
    if is_wide_prefix(hw):
        raise ValueError(f"{hw:#06x} is the first half of a 32-bit encoding")
    lo3, mid3 = hw & 7, (hw >> 3) & 7
    top = hw >> 13

    if top == 0b000:
        op = (hw >> 11) & 3
        if op < 3:
            imm5 = (hw >> 6) & 31
            name = ("lsls_imm", "lsrs_imm", "asrs_imm")[op]
            if op and imm5 == 0:
                imm5 = 32
            return Instruction(name, rd=lo3, rm=mid3, imm=imm5)
        field6 = (hw >> 6) & 7
        sub = (hw >> 9) & 1
        if (hw >> 10) & 1:
            return Instruction(("adds_imm3", "subs_imm3")[sub], rd=lo3, rn=mid3, imm=field6)
        return Instruction(("adds_reg", "subs_reg")[sub], rd=lo3, rn=mid3, rm=field6)

    if top == 0b001:
        op = (hw >> 11) & 3
        reg, imm8 = (hw >> 8) & 7, hw & 0xFF
        if op == 1:
            return Instruction("cmp_imm", rn=reg, imm=imm8)
        return Instruction(("movs_imm", None, "adds_imm8", "subs_imm8")[op], rd=reg, imm=imm8)

    if (hw >> 10) == 0b010000:
        name = DP_OPS[(hw >> 6) & 0xF]
        if name in ("tst", "cmp_reg", "cmn"):
            return Instruction(name, rn=lo3, rm=mid3)
        if name in ("muls", "rsbs"):
            return Instruction(name, rd=lo3, rn=mid3)
        return Instruction(name, rd=lo3, rm=mid3)

    if (hw >> 10) == 0b010001:
        op = (hw >> 8) & 3
        d = ((hw >> 4) & 8) | lo3
        m = (hw >> 3) & 0xF
        if op == 0:
            if d == PC and m == PC:
                return _undef(hw)
            return Instruction("add_hi", rd=d, rm=m)
        if op == 1:
            if (d < 8 and m < 8) or d == PC or m == PC:
                return _undef(hw)
            return Instruction("cmp_hi", rn=d, rm=m)
        if op == 2:
            return Instruction("mov_hi", rd=d, rm=m)
        if lo3:
            return _undef(hw)
        if (hw >> 7) & 1:
            return _undef(hw) if m == PC else Instruction("blx", rm=m)
        return Instruction("bx", rm=m)

    if (hw >> 11) == 0b01001:
        return Instruction("ldr_lit", rd=(hw >> 8) & 7, imm=(hw & 0xFF) * 4)

    if (hw >> 12) == 0b0101:
        return Instruction(REGOFF_OPS[(hw >> 9) & 7], rd=lo3, rn=mid3, rm=(hw >> 6) & 7)

    if top == 0b011:
        imm5 = (hw >> 6) & 31
        byte, load = (hw >> 12) & 1, (hw >> 11) & 1
        name = (("str_imm", "ldr_imm"), ("strb_imm", "ldrb_imm"))[byte][load]
        return Instruction(name, rd=lo3, rn=mid3, imm=imm5 if byte else imm5 * 4)

    if (hw >> 12) == 0b1000:
        name = ("strh_imm", "ldrh_imm")[(hw >> 11) & 1]
        return Instruction(name, rd=lo3, rn=mid3, imm=((hw >> 6) & 31) * 2)

    if (hw >> 12) == 0b1001:
        name = ("str_sp", "ldr_sp")[(hw >> 11) & 1]
        return Instruction(name, rd=(hw >> 8) & 7, imm=(hw & 0xFF) * 4)

    if (hw >> 12) == 0b1010:
        name = ("adr", "add_sp_imm")[(hw >> 11) & 1]
        return Instruction(name, rd=(hw >> 8) & 7, imm=(hw & 0xFF) * 4)

    if (hw >> 12) == 0b1011:
        return _decode_misc(hw)

    if (hw >> 12) == 0b1100:
        rn, regs = (hw >> 8) & 7, hw & 0xFF
        if not regs:
            return _undef(hw)
        if (hw >> 11) & 1:
            return Instruction("ldm", rn=rn, regs=regs)
        if regs >> rn & 1 and regs & ((1 << rn) - 1):
            return _undef(hw)
        return Instruction("stm", rn=rn, regs=regs)

    if (hw >> 12) == 0b1101:
        cond = (hw >> 8) & 0xF
        if cond == 0xE:
            return Instruction("udf", imm=hw & 0xFF)
        if cond == 0xF:
            return Instruction("svc", imm=hw & 0xFF)
        return Instruction("b_cond", cond=cond, imm=_sext((hw & 0xFF) << 1, 9))

    # 11100: unconditional branch
    return Instruction("b", imm=_sext((hw & 0x7FF) << 1, 12))


def _decode_misc(hw: int) -> Instruction:
    lo3, mid3 = hw & 7, (hw >> 3) & 7
    sub = (hw >> 8) & 0xF
    if sub == 0b0000:
        name = ("add_sp_sp", "sub_sp_sp")[(hw >> 7) & 1]
        return Instruction(name, imm=(hw & 0x7F) * 4)
    if sub == 0b0010:
        return Instruction(EXTEND_OPS[(hw >> 6) & 3], rd=lo3, rm=mid3)
    if sub in (0b0100, 0b0101):
        regs = (hw & 0xFF) | (((hw >> 8) & 1) << LR)
        return Instruction("push", regs=regs) if regs else _undef(hw)
    if sub == 0b0110:
        if hw & 0xFFEF == 0xB662:
            return Instruction("cpsid" if hw & 0x10 else "cpsie")
        return _undef(hw)
    if sub == 0b1010:
        op = (hw >> 6) & 3
        if op == 2:
            return _undef(hw)
        return Instruction(("rev", "rev16", None, "revsh")[op], rd=lo3, rm=mid3)
    if sub in (0b1100, 0b1101):
        regs = (hw & 0xFF) | (((hw >> 8) & 1) << PC)
        return Instruction("pop", regs=regs) if regs else _undef(hw)
    if sub == 0b1110:
        return Instruction("bkpt", imm=hw & 0xFF)
    if sub == 0b1111:
        op_a = (hw >> 4) & 0xF
        if hw & 0xF or op_a >= len(HINT_OPS):
            return _undef(hw)
        return Instruction(HINT_OPS[op_a])
    return _undef(hw)


def decode32(hw1: int, hw2: int) -> Instruction:
    if not is_wide_prefix(hw1):
        raise ValueError(f"{hw1:#06x} is not a 32-bit prefix")
    if hw1 & 0xF800 != 0xF000 or not hw2 & 0x8000:
        return _undef(hw1, hw2)
    op2 = (hw2 >> 12) & 7
    if op2 & 0b101 == 0b101:
        s = (hw1 >> 10) & 1
        i1 = 1 ^ ((hw2 >> 13) & 1) ^ s
        i2 = 1 ^ ((hw2 >> 11) & 1) ^ s
        imm = (s << 24) | (i1 << 23) | (i2 << 22) | ((hw1 & 0x3FF) << 12) | ((hw2 & 0x7FF) << 1)
        return Instruction("bl", imm=_sext(imm, 25))
    if op2 == 0b000:
        if hw1 & 0xFFF0 == 0xF380 and hw2 & 0xFF00 == 0x8800:
            rn, sysm = hw1 & 0xF, hw2 & 0xFF
            if sysm in SYSM_NAMES and sysm not in MSR_READ_ONLY and rn not in (SP, PC):
                return Instruction("msr", rn=rn, sysm=sysm)
        elif hw1 == 0xF3BF and hw2 & 0xFF00 == 0x8F00:
            op = (hw2 >> 4) & 0xF
            if hw2 & 0xF == 0xF and 4 <= op <= 6:
                return Instruction(BARRIER_OPS[op - 4], imm=0xF)
        elif hw1 == 0xF3EF and hw2 & 0xF000 == 0x8000:
            rd, sysm = (hw2 >> 8) & 0xF, hw2 & 0xFF
            if sysm in SYSM_NAMES and rd not in (SP, PC):
                return Instruction("mrs", rd=rd, sysm=sysm)
    elif op2 == 0b010 and hw1 & 0xFFF0 == 0xF7F0:
        return Instruction("udf_w", imm=((hw1 & 0xF) << 12) | (hw2 & 0xFFF))
    return _undef(hw1, hw2)


# ---------------------------------------------------------------- encoding

def _reg(value, limit, what="register"):
    if value is None or not 0 <= value < limit:
        raise NotEncodable(f"{what} {value!r} out of range 0..{limit - 1}")
    return value


def _imm(value, limit, scale=1, what="immediate"):
    if value is None or value < 0 or value % scale or value // scale >= limit:
        raise NotEncodable(f"{what} {value!r} not encodable (step {scale}, max {(limit - 1) * scale})")
    return value // scale


def _branch_field(offset, bits):
    # offset is relative to pc+4 and must be even
    if offset is None or offset & 1:
        raise NotEncodable(f"branch offset {offset!r} must be even")
    half = offset >> 1
    if not -(1 << (bits - 1)) <= half < (1 << (bits - 1)):
        raise NotEncodable(f"branch offset {offset} out of range")
    return half & ((1 << bits) - 1)


def encode(ins: Instruction) -> Encoding:
    """Encode an instruction; ``decode(encode(i)) == i`` for every valid ``i``."""
    return Encoding(_encode(ins))


def _encode(ins: Instruction) -> tuple[int, ...]:
    op = ins.op
    if op == "undefined":
        return tuple(ins.raw)
    if op in ("lsls_imm", "lsrs_imm", "asrs_imm"):
        k = ("lsls_imm", "lsrs_imm", "asrs_imm").index(op)
        imm = ins.imm
        if k == 0:
            field5 = _imm(imm, 32)
        else:
            if imm is None or not 1 <= imm <= 32:
                raise NotEncodable(f"shift {imm!r} out of range 1..32")
            field5 = imm & 31
        return ((k << 11) | (field5 << 6) | (_reg(ins.rm, 8) << 3) | _reg(ins.rd, 8),)
    if op in ("adds_reg", "subs_reg"):
        sub = op == "subs_reg"
        return (0x1800 | (sub << 9) | (_reg(ins.rm, 8) << 6) | (_reg(ins.rn, 8) << 3) | _reg(ins.rd, 8),)
    if op in ("adds_imm3", "subs_imm3"):
        sub = op == "subs_imm3"
        return (0x1C00 | (sub << 9) | (_imm(ins.imm, 8) << 6) | (_reg(ins.rn, 8) << 3) | _reg(ins.rd, 8),)
    if op in ("movs_imm", "cmp_imm", "adds_imm8", "subs_imm8"):
        k = ("movs_imm", "cmp_imm", "adds_imm8", "subs_imm8").index(op)
        reg = ins.rn if op == "cmp_imm" else ins.rd
        return (0x2000 | (k << 11) | (_reg(reg, 8) << 8) | _imm(ins.imm, 256),)
    if op in DP_OPS:
        k = DP_OPS.index(op)
        if op in ("tst", "cmp_reg", "cmn"):
            rdn, rm = ins.rn, ins.rm
        elif op in ("muls", "rsbs"):
            rdn, rm = ins.rd, ins.rn
        else:
            rdn, rm = ins.rd, ins.rm
        return (0x4000 | (k << 6) | (_reg(rm, 8) << 3) | _reg(rdn, 8),)
    if op in ("add_hi", "cmp_hi", "mov_hi"):
        k = ("add_hi", "cmp_hi", "mov_hi").index(op)
        d = _reg(ins.rn if op == "cmp_hi" else ins.rd, 16)
        m = _reg(ins.rm, 16)
        hw = 0x4400 | (k << 8) | ((d & 8) << 4) | (m << 3) | (d & 7)
        if decode16(hw) != ins:
            raise NotEncodable(f"{ins.op} with r{d}, r{m} is UNPREDICTABLE")
        return (hw,)
    if op in ("bx", "blx"):
        m = _reg(ins.rm, 16)
        if op == "blx" and m == PC:
            raise NotEncodable("blx pc is UNPREDICTABLE")
        return (0x4700 | ((op == "blx") << 7) | (m << 3),)
    if op == "ldr_lit":
        return (0x4800 | (_reg(ins.rd, 8) << 8) | _imm(ins.imm, 256, 4),)
    if op in REGOFF_OPS:
        k = REGOFF_OPS.index(op)
        return (0x5000 | (k << 9) | (_reg(ins.rm, 8) << 6) | (_reg(ins.rn, 8) << 3) | _reg(ins.rd, 8),)
    if op in ("str_imm", "ldr_imm", "strb_imm", "ldrb_imm"):
        byte = op in ("strb_imm", "ldrb_imm")
        load = op.startswith("ldr")
        imm5 = _imm(ins.imm, 32, 1 if byte else 4)
        return (0x6000 | (byte << 12) | (load << 11) | (imm5 << 6) | (_reg(ins.rn, 8) << 3) | _reg(ins.rd, 8),)
    if op in ("strh_imm", "ldrh_imm"):
        load = op == "ldrh_imm"
        return (0x8000 | (load << 11) | (_imm(ins.imm, 32, 2) << 6) | (_reg(ins.rn, 8) << 3) | _reg(ins.rd, 8),)
    if op in ("str_sp", "ldr_sp"):
        return (0x9000 | ((op == "ldr_sp") << 11) | (_reg(ins.rd, 8) << 8) | _imm(ins.imm, 256, 4),)
    if op in ("adr", "add_sp_imm"):
        return (0xA000 | ((op == "add_sp_imm") << 11) | (_reg(ins.rd, 8) << 8) | _imm(ins.imm, 256, 4),)
    if op in ("add_sp_sp", "sub_sp_sp"):
        return (0xB000 | ((op == "sub_sp_sp") << 7) | _imm(ins.imm, 128, 4),)
    if op in EXTEND_OPS:
        return (0xB200 | (EXTEND_OPS.index(op) << 6) | (_reg(ins.rm, 8) << 3) | _reg(ins.rd, 8),)
    if op == "push":
        regs = ins.regs or 0
        if not regs or regs & ~(0xFF | (1 << LR)):
            raise NotEncodable("push list must be a nonempty subset of r0-r7, lr")
        return (0xB400 | ((regs >> LR) & 1) << 8 | (regs & 0xFF),)
    if op == "pop":
        regs = ins.regs or 0
        if not regs or regs & ~(0xFF | (1 << PC)):
            raise NotEncodable("pop list must be a nonempty subset of r0-r7, pc")
        return (0xBC00 | ((regs >> PC) & 1) << 8 | (regs & 0xFF),)
    if op in ("cpsie", "cpsid"):
        return (0xB662 | ((op == "cpsid") << 4),)
    if op in ("rev", "rev16", "revsh"):
        k = {"rev": 0, "rev16": 1, "revsh": 3}[op]
        return (0xBA00 | (k << 6) | (_reg(ins.rm, 8) << 3) | _reg(ins.rd, 8),)
    if op == "bkpt":
        return (0xBE00 | _imm(ins.imm, 256),)
    if op in HINT_OPS:
        return (0xBF00 | (HINT_OPS.index(op) << 4),)
    if op in ("stm", "ldm"):
        regs = ins.regs or 0
        if not regs or regs & ~0xFF:
            raise NotEncodable(f"{op} list must be a nonempty subset of r0-r7")
        hw = 0xC000 | ((op == "ldm") << 11) | (_reg(ins.rn, 8) << 8) | regs
        if decode16(hw) != ins:
            raise NotEncodable(f"{op} base inside register list is UNPREDICTABLE")
        return (hw,)
    if op == "b_cond":
        return (0xD000 | (_reg(ins.cond, 14, "condition") << 8) | _branch_field(ins.imm, 8),)
    if op == "udf":
        return (0xDE00 | _imm(ins.imm, 256),)
    if op == "svc":
        return (0xDF00 | _imm(ins.imm, 256),)
    if op == "b":
        return (0xE000 | _branch_field(ins.imm, 11),)
    if op == "bl":
        bits = _branch_field(ins.imm, 24)
        s = (bits >> 23) & 1
        i1, i2 = (bits >> 22) & 1, (bits >> 21) & 1
        j1, j2 = 1 ^ i1 ^ s, 1 ^ i2 ^ s
        hw1 = 0xF000 | (s << 10) | ((bits >> 11) & 0x3FF)
        hw2 = 0xD000 | (j1 << 13) | (j2 << 11) | (bits & 0x7FF)
        return (hw1, hw2)
    if op == "msr":
        if ins.sysm not in SYSM_NAMES or ins.sysm in MSR_READ_ONLY:
            raise NotEncodable(f"msr to special register {ins.sysm!r}")
        rn = _reg(ins.rn, 16)
        if rn in (SP, PC):
            raise NotEncodable("msr from sp/pc is UNPREDICTABLE")
        return (0xF380 | rn, 0x8800 | ins.sysm)
    if op == "mrs":
        if ins.sysm not in SYSM_NAMES:
            raise NotEncodable(f"special register {ins.sysm!r}")
        rd = _reg(ins.rd, 16)
        if rd in (SP, PC):
            raise NotEncodable("mrs to sp/pc is UNPREDICTABLE")
        return (0xF3EF, 0x8000 | (rd << 8) | ins.sysm)
    if op in BARRIER_OPS:
        if ins.imm not in (None, 0xF):
            raise NotEncodable("only the SY barrier option is modelled")
        return (0xF3BF, 0x8F0F | ((BARRIER_OPS.index(op) + 4) << 4))
    if op == "udf_w":
        imm = _imm(ins.imm, 1 << 16)
        return (0xF7F0 | (imm >> 12), 0xA000 | (imm & 0xFFF))
    raise NotEncodable(f"unknown op {op!r}")


# ---------------------------------------------------------------- text

def reglist_text(regs: int) -> str:
    return "{" + ", ".join(REG_NAMES[i] for i in range(16) if regs >> i & 1) + "}"


def format_instruction(ins: Instruction, addr: int | None = None) -> str:
    """Unified-assembler-syntax text. Branch targets are absolute when
    ``addr`` is given, otherwise ``#<offset from pc>``."""
    op, r = ins.op, REG_NAMES
    mn = ins.mnemonic
    if op == "undefined":
        if len(ins.raw) == 1:
            return f".inst.n 0x{ins.raw[0]:04x}"
        return f".inst.w 0x{ins.raw[0]:04x}{ins.raw[1]:04x}"
    if op == "lsls_imm" and ins.imm == 0:
        return f"movs {r[ins.rd]}, {r[ins.rm]}"
    if op in ("lsls_imm", "lsrs_imm", "asrs_imm"):
        return f"{mn} {r[ins.rd]}, {r[ins.rm]}, #{ins.imm}"
    if op in ("adds_reg", "subs_reg"):
        return f"{mn} {r[ins.rd]}, {r[ins.rn]}, {r[ins.rm]}"
    if op in ("adds_imm3", "subs_imm3"):
        return f"{mn} {r[ins.rd]}, {r[ins.rn]}, #{ins.imm}"
    if op == "cmp_imm":
        return f"cmp {r[ins.rn]}, #{ins.imm}"
    if op in ("movs_imm", "adds_imm8", "subs_imm8"):
        return f"{mn} {r[ins.rd]}, #{ins.imm}"
    if op in ("tst", "cmp_reg", "cmn", "cmp_hi"):
        return f"{mn} {r[ins.rn]}, {r[ins.rm]}"
    if op == "muls":
        return f"muls {r[ins.rd]}, {r[ins.rn]}, {r[ins.rd]}"
    if op == "rsbs":
        return f"rsbs {r[ins.rd]}, {r[ins.rn]}, #0"
    if op in DP_OPS or op in ("add_hi", "mov_hi") or op in EXTEND_OPS or op in ("rev", "rev16", "revsh"):
        return f"{mn} {r[ins.rd]}, {r[ins.rm]}"
    if op in ("bx", "blx"):
        return f"{mn} {r[ins.rm]}"
    if op == "ldr_lit":
        return f"ldr {r[ins.rd]}, [pc, #{ins.imm}]"
    if op in REGOFF_OPS:
        return f"{mn} {r[ins.rd]}, [{r[ins.rn]}, {r[ins.rm]}]"
    if op in ("str_imm", "ldr_imm", "strb_imm", "ldrb_imm", "strh_imm", "ldrh_imm"):
        return f"{mn} {r[ins.rd]}, [{r[ins.rn]}, #{ins.imm}]"
    if op in ("str_sp", "ldr_sp"):
        return f"{mn} {r[ins.rd]}, [sp, #{ins.imm}]"
    if op == "adr":
        return f"adr {r[ins.rd]}, #{ins.imm}"
    if op == "add_sp_imm":
        return f"add {r[ins.rd]}, sp, #{ins.imm}"
    if op in ("add_sp_sp", "sub_sp_sp"):
        return f"{mn} sp, #{ins.imm}"
    if op in ("push", "pop"):
        return f"{op} {reglist_text(ins.regs)}"
    if op in ("cpsie", "cpsid"):
        return f"{op} i"
    if op in ("bkpt", "svc", "udf", "udf_w"):
        return f"{mn} #{ins.imm}"
    if op in HINT_OPS:
        return op
    if op == "stm":
        return f"stm {r[ins.rn]}!, {reglist_text(ins.regs)}"
    if op == "ldm":
        bang = "" if ins.regs >> ins.rn & 1 else "!"
        return f"ldm {r[ins.rn]}{bang}, {reglist_text(ins.regs)}"
    if op in ("b", "b_cond", "bl"):
        if addr is None:
            return f"{mn} #{ins.imm}"
        return f"{mn} 0x{(addr + 4 + ins.imm) & 0xFFFFFFFF:08x}"
    if op == "msr":
        return f"msr {SYSM_NAMES[ins.sysm]}, {r[ins.rn]}"
    if op == "mrs":
        return f"mrs {r[ins.rd]}, {SYSM_NAMES[ins.sysm]}"
    if op in BARRIER_OPS:
        return f"{op} sy"
    raise ValueError(f"cannot format {op!r}")


def all_16bit() -> list[Instruction]:
    """Decode every 16-bit halfword that is not a 32-bit prefix."""
    return [decode16(hw) for hw in range(0x10000) if not is_wide_prefix(hw)]
