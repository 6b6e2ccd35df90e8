"""A small two-pass Thumb assembler for the ARMv6-M subset.

Accepts the text produced by ``format_instruction`` plus the usual
conveniences found in hand-written sources: labels, ``.word``/``.hword``,
``.align``, ``.space``, register ranges in lists, ``negs``/``ldmia``/``stmia``
spellings, and branch or ``adr``/``ldr`` operands given as labels.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .instruction import (
    COND_NAMES, DP_OPS, EXTEND_OPS, HINT_OPS, BARRIER_OPS, REG_NAMES,
    SYSM_NAMES, Instruction, encode,
)


class AssemblyError(ValueError):
    def __init__(self, message, line_no=None, text=None):
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{where}{message}" + (f" ({text.strip()!r})" if text else ""))
        self.line_no = line_no


@dataclass
class Item:
    """One placed element of the program: an instruction or raw data."""

    addr: int
    size: int
    ins: Instruction | None = None
    data: bytes = b""
    line_no: int = 0
    source: str = ""


@dataclass
class Program:
    base: int
    image: bytes
    labels: dict[str, int] = field(default_factory=dict)
    items: list[Item] = field(default_factory=list)

    @property
    def end(self) -> int:
        return self.base + len(self.image)

    def instructions(self) -> list[tuple[int, Instruction]]:
        return [(it.addr, it.ins) for it in self.items if it.ins is not None]


_REG_ALIASES = {"sb": 9, "sl": 10, "fp": 11, "ip": 12, "sp": 13, "lr": 14, "pc": 15}
_SYSM_BY_NAME = {name: num for num, name in SYSM_NAMES.items()}
_COND_ALIASES = {"hs": "cs", "lo": "cc"}
_IGNORED = {".thumb", ".syntax", ".text", ".global", ".globl", ".type", ".size",
            ".thumb_func", ".section", ".cpu", ".arch", ".fpu", ".p2align",
            ".code", ".file", ".ltorg", ".balign_code"}

_DP_SIMPLE = {name: name for name in DP_OPS if not name.endswith("_reg")}


def _strip_comment(line: str) -> str:
    for marker in ("@", "//", ";"):
        pos = line.find(marker)
        if pos >= 0:
            line = line[:pos]
    return line.strip()


def _split_operands(text: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in text:
        if ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
        if ch == "," and depth == 0:
            out.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if cur or out:
        out.append("".join(cur).strip())
    return [o for o in out if o != ""]


def parse_register(tok: str) -> int:
    t = tok.strip().lower()
    if t in _REG_ALIASES:
        return _REG_ALIASES[t]
    m = re.fullmatch(r"r(\d+)", t)
    if m and int(m.group(1)) < 16:
        return int(m.group(1))
    raise AssemblyError(f"bad register {tok!r}")


def _is_register(tok: str) -> bool:
    try:
        parse_register(tok)
        return True
    except AssemblyError:
        return False


def parse_reglist(tok: str) -> int:
    t = tok.strip()
    if not (t.startswith("{") and t.endswith("}")):
        raise AssemblyError(f"expected register list, got {tok!r}")
    mask = 0
    for part in t[1:-1].split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = (parse_register(p) for p in part.split("-"))
            for i in range(lo, hi + 1):
                mask |= 1 << i
        else:
            mask |= 1 << parse_register(part)
    return mask


class _Resolver:
    def __init__(self, labels, pass_one):
        self.labels = labels
        self.pass_one = pass_one

    def value(self, expr: str) -> int:
        e = expr.strip()
        if e.startswith("#"):
            e = e[1:].strip()
        try:
            return int(e, 0)
        except ValueError:
            pass
        m = re.fullmatch(r"([A-Za-z_.$][\w.$]*)\s*([+-]\s*\w+)?", e)
        if not m:
            raise AssemblyError(f"bad expression {expr!r}")
        name = m.group(1)
        if name not in self.labels:
            if self.pass_one:
                return 0
            raise AssemblyError(f"undefined label {name!r}")
        off = int(m.group(2).replace(" ", ""), 0) if m.group(2) else 0
        return self.labels[name] + off


def _branch_offset(tok: str, addr: int, res: _Resolver) -> int:
    """``#n`` is relative to pc+4; a bare number or label is an absolute target."""
    t = tok.strip()
    if t.startswith("#"):
        return res.value(t)
    delta = (res.value(t) - (addr + 4)) & 0xFFFFFFFF
    return delta - (1 << 32) if delta >> 31 else delta


def _mem_operand(tok: str):
    t = tok.strip()
    if not (t.startswith("[") and t.endswith("]")):
        raise AssemblyError(f"expected memory operand, got {tok!r}")
    parts = [p.strip() for p in t[1:-1].split(",")]
    base = parse_register(parts[0])
    if len(parts) == 1:
        return base, ("imm", "0")
    if len(parts) != 2:
        raise AssemblyError(f"bad memory operand {tok!r}")
    if parts[1].startswith("#"):
        return base, ("imm", parts[1])
    return base, ("reg", parse_register(parts[1]))


_MEM_WIDTH = {"ldr": "", "str": "", "ldrb": "b", "strb": "b", "ldrh": "h",
              "strh": "h", "ldrsb": "sb", "ldrsh": "sh"}


def parse_instruction(text: str, addr: int = 0, labels: dict | None = None,
                      *, _pass_one: bool = False) -> Instruction:
    """Parse one instruction. ``addr`` is needed for label or absolute operands."""
    res = _Resolver(labels or {}, _pass_one)
    line = text.strip()
    if not line:
        raise AssemblyError("empty instruction")
    parts = line.split(None, 1)
    mn = parts[0].lower()
    ops = _split_operands(parts[1]) if len(parts) > 1 else []
    R = parse_register

    def need(n):
        if len(ops) != n:
            raise AssemblyError(f"{mn} expects {n} operands, got {len(ops)}")

    def imm(tok):
        return res.value(tok)

    if mn in (".inst.n", ".inst.w", ".inst"):
        raw = int(ops[0], 0)
        hws = (raw,) if mn == ".inst.n" or raw <= 0xFFFF else (raw >> 16, raw & 0xFFFF)
        from .instruction import decode
        return decode(hws if len(hws) == 2 else hws[0])
    if mn in HINT_OPS:
        need(0)
        return Instruction(mn)
    if mn in BARRIER_OPS:
        if ops and ops[0].lower() != "sy":
            raise AssemblyError(f"only the sy option is supported for {mn}")
        return Instruction(mn, imm=0xF)
    if mn in ("cpsie", "cpsid"):
        if ops != ["i"]:
            raise AssemblyError(f"{mn} takes the i flag")
        return Instruction(mn)
    if mn in ("bkpt", "svc", "udf", "udf.w"):
        value = imm(ops[0]) if ops else 0
        return Instruction("udf_w" if mn == "udf.w" else mn, imm=value)
    if mn in ("bx", "blx"):
        need(1)
        if mn == "blx" and not _is_register(ops[0]):
            raise AssemblyError("blx with an immediate target is not ARMv6-M")
        return Instruction(mn, rm=R(ops[0]))
    if mn == "bl":
        need(1)
        return Instruction("bl", imm=_branch_offset(ops[0], addr, res))
    if mn == "b" or (mn.startswith("b") and (mn[1:] in COND_NAMES or mn[1:] in _COND_ALIASES)):
        need(1)
        off = _branch_offset(ops[0], addr, res)
        if mn == "b":
            return Instruction("b", imm=off)
        cond = _COND_ALIASES.get(mn[1:], mn[1:])
        return Instruction("b_cond", imm=off, cond=COND_NAMES.index(cond))
    if mn == "msr":
        need(2)
        return Instruction("msr", rn=R(ops[1]), sysm=_SYSM_BY_NAME[ops[0].lower()])
    if mn == "mrs":
        need(2)
        return Instruction("mrs", rd=R(ops[0]), sysm=_SYSM_BY_NAME[ops[1].lower()])
    if mn in ("push", "pop"):
        need(1)
        return Instruction(mn, regs=parse_reglist(ops[0]))
    if mn in ("stm", "stmia", "stmea", "ldm", "ldmia", "ldmfd"):
        need(2)
        base = ops[0].strip()
        bang = base.endswith("!")
        rn = R(base.rstrip("!"))
        regs = parse_reglist(ops[1])
        op = "stm" if mn.startswith("st") else "ldm"
        if op == "stm" and not bang:
            raise AssemblyError("stm always writes back; write the base as rn!")
        if op == "ldm" and bang == bool(regs >> rn & 1):
            raise AssemblyError("ldm writes back exactly when the base is not in the list")
        return Instruction(op, rn=rn, regs=regs)
    if mn in ("rev", "rev16", "revsh") or mn in EXTEND_OPS:
        need(2)
        return Instruction(mn, rd=R(ops[0]), rm=R(ops[1]))
    if mn == "adr":
        need(2)
        rd = R(ops[0])
        if ops[1].startswith("#"):
            return Instruction("adr", rd=rd, imm=imm(ops[1]))
        return Instruction("adr", rd=rd, imm=res.value(ops[1]) - ((addr + 4) & ~3))
    if mn in _MEM_WIDTH:
        need(2)
        rt = R(ops[0])
        if ops[1].startswith("="):
            raise AssemblyError("literal pseudo-loads are not supported; use a label")
        if not ops[1].startswith("["):
            target = res.value(ops[1])
            if mn != "ldr":
                raise AssemblyError(f"{mn} has no pc-relative form")
            return Instruction("ldr_lit", rd=rt, imm=target - ((addr + 4) & ~3))
        base, (kind, off) = _mem_operand(ops[1])
        if kind == "reg":
            return Instruction(f"{mn}_reg", rd=rt, rn=base, rm=off)
        value = imm(off)
        if base == 15:
            if mn != "ldr":
                raise AssemblyError(f"{mn} has no pc-relative form")
            return Instruction("ldr_lit", rd=rt, imm=value)
        if base == 13:
            if mn not in ("ldr", "str"):
                raise AssemblyError(f"{mn} has no sp-relative form")
            return Instruction(f"{mn}_sp", rd=rt, imm=value)
        if mn in ("ldrsb", "ldrsh"):
            raise AssemblyError(f"{mn} only has a register-offset form")
        return Instruction(f"{mn}_imm", rd=rt, rn=base, imm=value)
    if mn in ("movs", "mov"):
        need(2)
        rd = R(ops[0])
        if ops[1].startswith("#"):
            if mn == "mov":
                raise AssemblyError("mov with an immediate is movs in Thumb-1")
            return Instruction("movs_imm", rd=rd, imm=imm(ops[1]))
        rm = R(ops[1])
        if mn == "movs":
            return Instruction("lsls_imm", rd=rd, rm=rm, imm=0)
        return Instruction("mov_hi", rd=rd, rm=rm)
    if mn in ("lsls", "lsrs", "asrs"):
        if len(ops) == 3:
            return Instruction(f"{mn}_imm", rd=R(ops[0]), rm=R(ops[1]), imm=imm(ops[2]))
        need(2)
        if ops[1].startswith("#"):
            return Instruction(f"{mn}_imm", rd=R(ops[0]), rm=R(ops[0]), imm=imm(ops[1]))
        return Instruction(f"{mn}_reg", rd=R(ops[0]), rm=R(ops[1]))
    if mn in ("adds", "subs"):
        if len(ops) == 3:
            rd, rn = R(ops[0]), R(ops[1])
            if ops[2].startswith("#"):
                value = imm(ops[2])
                if 0 <= value < 8:
                    return Instruction(f"{mn}_imm3", rd=rd, rn=rn, imm=value)
                if rd == rn:
                    return Instruction(f"{mn}_imm8", rd=rd, imm=value)
                raise AssemblyError(f"{mn} immediate out of range")
            return Instruction(f"{mn}_reg", rd=rd, rn=rn, rm=R(ops[2]))
        need(2)
        rd = R(ops[0])
        if ops[1].startswith("#"):
            return Instruction(f"{mn}_imm8", rd=rd, imm=imm(ops[1]))
        return Instruction(f"{mn}_reg", rd=rd, rn=rd, rm=R(ops[1]))
    if mn == "add":
        if len(ops) == 3:
            rd, rn = R(ops[0]), R(ops[1])
            if rn == 13 and ops[2].startswith("#"):
                if rd == 13:
                    return Instruction("add_sp_sp", imm=imm(ops[2]))
                return Instruction("add_sp_imm", rd=rd, imm=imm(ops[2]))
            if rn == 15 and ops[2].startswith("#"):
                return Instruction("adr", rd=rd, imm=imm(ops[2]))
            if rd == rn and not ops[2].startswith("#"):
                return Instruction("add_hi", rd=rd, rm=R(ops[2]))
            raise AssemblyError("unsupported add form")
        need(2)
        rd = R(ops[0])
        if ops[1].startswith("#"):
            if rd != 13:
                raise AssemblyError("add with immediate needs sp or the adds form")
            return Instruction("add_sp_sp", imm=imm(ops[1]))
        return Instruction("add_hi", rd=rd, rm=R(ops[1]))
    if mn == "sub":
        if len(ops) == 3 and R(ops[0]) == 13 and R(ops[1]) == 13:
            return Instruction("sub_sp_sp", imm=imm(ops[2]))
        need(2)
        if R(ops[0]) != 13:
            raise AssemblyError("sub without flags only exists for sp")
        return Instruction("sub_sp_sp", imm=imm(ops[1]))
    if mn == "cmp":
        need(2)
        rn = R(ops[0])
        if ops[1].startswith("#"):
            return Instruction("cmp_imm", rn=rn, imm=imm(ops[1]))
        rm = R(ops[1])
        if rn < 8 and rm < 8:
            return Instruction("cmp_reg", rn=rn, rm=rm)
        return Instruction("cmp_hi", rn=rn, rm=rm)
    if mn in ("tst", "cmn"):
        need(2)
        return Instruction(mn, rn=R(ops[0]), rm=R(ops[1]))
    if mn in ("rsbs", "negs"):
        if mn == "rsbs":
            need(3)
            if imm(ops[2]) != 0:
                raise AssemblyError("rsbs only takes #0")
        return Instruction("rsbs", rd=R(ops[0]), rn=R(ops[1]))
    if mn == "muls":
        if len(ops) == 3:
            rd, rn, rm = (R(o) for o in ops)
            if rm == rd:
                return Instruction("muls", rd=rd, rn=rn)
            if rn == rd:
                return Instruction("muls", rd=rd, rn=rm)
            raise AssemblyError("muls destination must equal one source")
        need(2)
        return Instruction("muls", rd=R(ops[0]), rn=R(ops[1]))
    if mn in _DP_SIMPLE:
        if len(ops) == 3 and R(ops[0]) == R(ops[1]):
            ops = [ops[0], ops[2]]
        need(2)
        return Instruction(mn, rd=R(ops[0]), rm=R(ops[1]))
    raise AssemblyError(f"unknown mnemonic {mn!r}")


def _directive(mn, ops, res):
    """Bytes emitted by a data directive (``None`` if not a data directive)."""
    if mn in (".word", ".long", ".4byte"):
        return b"".join((res.value(o) & 0xFFFFFFFF).to_bytes(4, "little") for o in ops)
    if mn in (".hword", ".short", ".2byte"):
        return b"".join((res.value(o) & 0xFFFF).to_bytes(2, "little") for o in ops)
    if mn == ".byte":
        return bytes(res.value(o) & 0xFF for o in ops)
    if mn in (".space", ".skip", ".zero"):
        fill = res.value(ops[1]) & 0xFF if len(ops) > 1 else 0
        return bytes([fill]) * res.value(ops[0])
    return None


def assemble(source: str, base: int = 0) -> Program:
    """Assemble ``source`` for placement at ``base`` (halfword aligned)."""
    if base & 1:
        raise AssemblyError("base address must be halfword aligned")
    lines = source.splitlines()
    labels: dict[str, int] = {}
    for pass_one in (True, False):
        res = _Resolver(labels, pass_one)
        addr = base
        items: list[Item] = []
        for no, raw in enumerate(lines, 1):
            line = _strip_comment(raw)
            while True:
                m = re.match(r"^([A-Za-z_.$][\w.$]*):\s*", line)
                if not m:
                    break
                name = m.group(1)
                if pass_one and name in labels:
                    raise AssemblyError(f"duplicate label {name!r}", no, raw)
                labels[name] = addr
                line = line[m.end():]
            if not line:
                continue
            parts = line.split(None, 1)
            mn = parts[0].lower()
            ops = _split_operands(parts[1]) if len(parts) > 1 else []
            if mn in _IGNORED:
                continue
            if mn in (".align", ".balign"):
                n = res.value(ops[0]) if ops else 2
                size = n if mn == ".balign" else 1 << n
                pad = (-addr) % size
                if pad:
                    data = (b"\x00\xbf" * pad)[:pad]
                    items.append(Item(addr, pad, data=data, line_no=no, source=raw))
                    addr += pad
                continue
            labels["."] = addr  # current location, as in "b ."
            try:
                data = _directive(mn, ops, res)
                if data is not None:
                    items.append(Item(addr, len(data), data=data, line_no=no, source=raw))
                    addr += len(data)
                    continue
                if mn.startswith("."):
                    raise AssemblyError(f"unknown directive {mn!r}")
                ins = parse_instruction(line, addr, labels, _pass_one=pass_one)
                size = ins.width
                if not pass_one:
                    encode(ins)  # range checks
                items.append(Item(addr, size, ins=ins, line_no=no, source=raw))
                addr += size
            except AssemblyError as exc:
                if exc.line_no is not None:
                    raise
                raise AssemblyError(str(exc), no, raw) from None
            except ValueError as exc:
                raise AssemblyError(str(exc), no, raw) from None
    labels.pop(".", None)
    image = bytearray()
    for it in items:
        image += encode(it.ins).to_bytes() if it.ins is not None else it.data
    return Program(base, bytes(image), dict(labels), items)


def disassemble(data: bytes, base: int = 0) -> list[tuple[int, Instruction]]:
    """Linear sweep over ``data``; a trailing lone prefix halfword stays undefined."""
    from .instruction import Encoding, decode, is_wide_prefix
    out = []
    off = 0
    while off + 2 <= len(data):
        hw = int.from_bytes(data[off:off + 2], "little")
        if is_wide_prefix(hw) and off + 4 <= len(data):
            ins = decode(Encoding.from_bytes(data, off))
        else:
            ins = decode(hw) if not is_wide_prefix(hw) else Instruction("undefined", raw=(hw,))
        out.append((base + off, ins))
        off += ins.width
    return out


def to_source(listing: list[tuple[int, Instruction]]) -> str:
    """Render instructions as re-assemblable text with absolute branch targets."""
    from .instruction import format_instruction
    return "\n".join(format_instruction(ins, addr) for addr, ins in listing) + "\n"


__all__ = ["AssemblyError", "Item", "Program", "assemble", "disassemble",
           "parse_instruction", "parse_register", "parse_reglist", "to_source",
           "REG_NAMES"]
