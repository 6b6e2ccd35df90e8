# Hot execution kernel. Kept free of package imports so the identical source
# can be compiled by Cython (see _cexec.pyx) and used as the pure fallback.

COMPLETED = 0
HARDFAULT = 1
SVCALL = 2
BREAKPOINT = 3

M32 = 0xFFFFFFFF

# cycle counts (published Cortex-M0 figures)
CYC_MEM = 2
CYC_BRANCH = 3
CYC_BL = 4
CYC_BARRIER = 4
CYC_SYSREG = 4
CYC_SLEEP = 2


class Fault(Exception):
    def __init__(self, addr, access):
        Exception.__init__(self, addr, access)
        self.addr = addr
        self.access = access


class Cpu:
    """Mutable scratch state for one instruction."""

    __slots__ = ("r", "n", "z", "c", "v", "t", "primask", "spsel", "sp_alt",
                 "ipsr", "sram", "sram_base", "sram_len", "sram_dirty",
                 "mem", "mmio", "next_pc", "cycles")

    def __init__(self, r, flags, t, primask, control, sp_alt, ipsr,
                 sram, sram_base, mem):
        self.r = r
        self.n = (flags >> 31) & 1
        self.z = (flags >> 30) & 1
        self.c = (flags >> 29) & 1
        self.v = (flags >> 28) & 1
        self.t = t
        self.primask = primask
        self.spsel = (control >> 1) & 1
        self.sp_alt = sp_alt
        self.ipsr = ipsr
        self.sram = sram
        self.sram_base = sram_base
        self.sram_len = len(sram)
        self.sram_dirty = False
        self.mem = mem
        self.mmio = None
        self.next_pc = 0
        self.cycles = 1

    def flags(self):
        return (self.n << 31) | (self.z << 30) | (self.c << 29) | (self.v << 28)


def load(cpu, addr, size, pcrel):
    if addr & (size - 1):
        raise Fault(addr, "read-unaligned")
    off = addr - cpu.sram_base
    if 0 <= off and off + size <= cpu.sram_len:
        return int.from_bytes(cpu.sram[off:off + size], "little")
    value = cpu.mem.load(addr, size, pcrel)
    if value is None:
        raise Fault(addr, "read")
    return value


def store(cpu, addr, size, value):
    if addr & (size - 1):
        raise Fault(addr, "write-unaligned")
    off = addr - cpu.sram_base
    value &= (1 << (8 * size)) - 1
    if 0 <= off and off + size <= cpu.sram_len:
        if not cpu.sram_dirty:
            cpu.sram = bytearray(cpu.sram)
            cpu.sram_dirty = True
        cpu.sram[off:off + size] = value.to_bytes(size, "little")
        return
    if not cpu.mem.store(addr, size, value):
        raise Fault(addr, "write")
    if cpu.mmio is None:
        cpu.mmio = []
    cpu.mmio.append((addr, size, value))


def read_reg(cpu, i):
    # pc reads as the instruction address + 4
    return cpu.r[i]


def write_reg(cpu, i, value):
    if i == 13:
        cpu.r[13] = value & 0xFFFFFFFC
    elif i == 15:
        cpu.next_pc = value & 0xFFFFFFFE
        cpu.cycles = CYC_BRANCH
    else:
        cpu.r[i] = value & M32


def bx_write_pc(cpu, value):
    cpu.t = value & 1
    cpu.next_pc = value & 0xFFFFFFFE


def add_with_carry(x, y, carry):
    unsigned = x + y + carry
    result = unsigned & M32
    sx = x - 0x100000000 if x & 0x80000000 else x
    sy = y - 0x100000000 if y & 0x80000000 else y
    signed = sx + sy + carry
    sr = result - 0x100000000 if result & 0x80000000 else result
    return result, 1 if unsigned != result else 0, 1 if signed != sr else 0


def set_nz(cpu, result):
    cpu.n = (result >> 31) & 1
    cpu.z = 1 if result == 0 else 0


def set_nzcv(cpu, result, c, v):
    cpu.n = (result >> 31) & 1
    cpu.z = 1 if result == 0 else 0
    cpu.c = c
    cpu.v = v


def shift_c(value, kind, amount, carry_in):
    """kind: 0 lsl, 1 lsr, 2 asr, 3 ror. Returns (result, carry)."""
    if amount == 0:
        return value, carry_in
    if kind == 0:
        if amount > 32:
            return 0, 0
        wide = value << amount
        return wide & M32, (wide >> 32) & 1
    if kind == 1:
        if amount > 32:
            return 0, 0
        return (value >> amount) & M32, (value >> (amount - 1)) & 1
    if kind == 2:
        signed = value - 0x100000000 if value & 0x80000000 else value
        if amount >= 32:
            res = M32 if signed < 0 else 0
            return res, res & 1
        return (signed >> amount) & M32, (signed >> (amount - 1)) & 1
    amount &= 31
    if amount == 0:
        return value, (value >> 31) & 1
    res = ((value >> amount) | (value << (32 - amount))) & M32
    return res, (res >> 31) & 1


def cond_passed(cpu, cond):
    base = cond >> 1
    if base == 0:
        res = cpu.z == 1
    elif base == 1:
        res = cpu.c == 1
    elif base == 2:
        res = cpu.n == 1
    elif base == 3:
        res = cpu.v == 1
    elif base == 4:
        res = cpu.c == 1 and cpu.z == 0
    elif base == 5:
        res = cpu.n == cpu.v
    else:
        res = cpu.n == cpu.v and cpu.z == 0
    if cond & 1:
        return not res
    return res


def sext(value, bits):
    sign = 1 << (bits - 1)
    return ((value & (sign - 1)) - (value & sign)) & M32


def msp_active(cpu):
    return cpu.ipsr != 0 or cpu.spsel == 0


# --------------------------------------------------------------- handlers

def x_shift_imm(cpu, ins, kind):
    res, c = shift_c(cpu.r[ins.rm], kind, ins.imm, cpu.c)
    cpu.r[ins.rd] = res
    cpu.n = (res >> 31) & 1
    cpu.z = 1 if res == 0 else 0
    cpu.c = c


def x_lsls_imm(cpu, ins):
    x_shift_imm(cpu, ins, 0)


def x_lsrs_imm(cpu, ins):
    x_shift_imm(cpu, ins, 1)


def x_asrs_imm(cpu, ins):
    x_shift_imm(cpu, ins, 2)


def x_adds_reg(cpu, ins):
    res, c, v = add_with_carry(cpu.r[ins.rn], cpu.r[ins.rm], 0)
    cpu.r[ins.rd] = res
    set_nzcv(cpu, res, c, v)


def x_subs_reg(cpu, ins):
    res, c, v = add_with_carry(cpu.r[ins.rn], cpu.r[ins.rm] ^ M32, 1)
    cpu.r[ins.rd] = res
    set_nzcv(cpu, res, c, v)


def x_adds_imm(cpu, ins):
    rn = ins.rd if ins.rn is None else ins.rn
    res, c, v = add_with_carry(cpu.r[rn], ins.imm, 0)
    cpu.r[ins.rd] = res
    set_nzcv(cpu, res, c, v)


def x_subs_imm(cpu, ins):
    rn = ins.rd if ins.rn is None else ins.rn
    res, c, v = add_with_carry(cpu.r[rn], ins.imm ^ M32, 1)
    cpu.r[ins.rd] = res
    set_nzcv(cpu, res, c, v)


def x_movs_imm(cpu, ins):
    cpu.r[ins.rd] = ins.imm
    set_nz(cpu, ins.imm)


def x_cmp_imm(cpu, ins):
    res, c, v = add_with_carry(cpu.r[ins.rn], ins.imm ^ M32, 1)
    set_nzcv(cpu, res, c, v)


def x_logic(cpu, ins, res):
    cpu.r[ins.rd] = res
    set_nz(cpu, res)


def x_ands(cpu, ins):
    x_logic(cpu, ins, cpu.r[ins.rd] & cpu.r[ins.rm])


def x_eors(cpu, ins):
    x_logic(cpu, ins, cpu.r[ins.rd] ^ cpu.r[ins.rm])


def x_orrs(cpu, ins):
    x_logic(cpu, ins, cpu.r[ins.rd] | cpu.r[ins.rm])


def x_bics(cpu, ins):
    x_logic(cpu, ins, cpu.r[ins.rd] & (cpu.r[ins.rm] ^ M32))


def x_mvns(cpu, ins):
    x_logic(cpu, ins, cpu.r[ins.rm] ^ M32)


def x_shift_reg(cpu, ins, kind):
    res, c = shift_c(cpu.r[ins.rd], kind, cpu.r[ins.rm] & 0xFF, cpu.c)
    cpu.r[ins.rd] = res
    set_nz(cpu, res)
    cpu.c = c


def x_lsls_reg(cpu, ins):
    x_shift_reg(cpu, ins, 0)


def x_lsrs_reg(cpu, ins):
    x_shift_reg(cpu, ins, 1)


def x_asrs_reg(cpu, ins):
    x_shift_reg(cpu, ins, 2)


def x_rors(cpu, ins):
    x_shift_reg(cpu, ins, 3)


def x_adcs(cpu, ins):
    res, c, v = add_with_carry(cpu.r[ins.rd], cpu.r[ins.rm], cpu.c)
    cpu.r[ins.rd] = res
    set_nzcv(cpu, res, c, v)


def x_sbcs(cpu, ins):
    res, c, v = add_with_carry(cpu.r[ins.rd], cpu.r[ins.rm] ^ M32, cpu.c)
    cpu.r[ins.rd] = res
    set_nzcv(cpu, res, c, v)


def x_tst(cpu, ins):
    set_nz(cpu, cpu.r[ins.rn] & cpu.r[ins.rm])


def x_rsbs(cpu, ins):
    res, c, v = add_with_carry(cpu.r[ins.rn] ^ M32, 0, 1)
    cpu.r[ins.rd] = res
    set_nzcv(cpu, res, c, v)


def x_cmp_reg(cpu, ins):
    res, c, v = add_with_carry(cpu.r[ins.rn], cpu.r[ins.rm] ^ M32, 1)
    set_nzcv(cpu, res, c, v)


def x_cmn(cpu, ins):
    res, c, v = add_with_carry(cpu.r[ins.rn], cpu.r[ins.rm], 0)
    set_nzcv(cpu, res, c, v)


def x_muls(cpu, ins):
    res = (cpu.r[ins.rn] * cpu.r[ins.rd]) & M32
    cpu.r[ins.rd] = res
    set_nz(cpu, res)


def x_add_hi(cpu, ins):
    write_reg(cpu, ins.rd, cpu.r[ins.rd] + cpu.r[ins.rm])


def x_mov_hi(cpu, ins):
    write_reg(cpu, ins.rd, cpu.r[ins.rm])


def x_bx(cpu, ins):
    bx_write_pc(cpu, cpu.r[ins.rm])
    cpu.cycles = CYC_BRANCH


def x_blx(cpu, ins):
    target = cpu.r[ins.rm]
    cpu.r[14] = ((cpu.r[15] - 2) | 1) & M32
    bx_write_pc(cpu, target)
    cpu.cycles = CYC_BRANCH


def x_ldr_lit(cpu, ins):
    cpu.r[ins.rd] = load(cpu, (cpu.r[15] & 0xFFFFFFFC) + ins.imm, 4, True)
    cpu.cycles = CYC_MEM


def x_mem(cpu, addr, ins, size, is_load, signed):
    addr &= M32
    if is_load:
        value = load(cpu, addr, size, False)
        if signed:
            value = sext(value, 8 * size)
        cpu.r[ins.rd] = value
    else:
        store(cpu, addr, size, cpu.r[ins.rd])
    cpu.cycles = CYC_MEM


def x_str_reg(cpu, ins):
    x_mem(cpu, cpu.r[ins.rn] + cpu.r[ins.rm], ins, 4, False, False)


def x_strh_reg(cpu, ins):
    x_mem(cpu, cpu.r[ins.rn] + cpu.r[ins.rm], ins, 2, False, False)


def x_strb_reg(cpu, ins):
    x_mem(cpu, cpu.r[ins.rn] + cpu.r[ins.rm], ins, 1, False, False)


def x_ldrsb_reg(cpu, ins):
    x_mem(cpu, cpu.r[ins.rn] + cpu.r[ins.rm], ins, 1, True, True)


def x_ldr_reg(cpu, ins):
    x_mem(cpu, cpu.r[ins.rn] + cpu.r[ins.rm], ins, 4, True, False)


def x_ldrh_reg(cpu, ins):
    x_mem(cpu, cpu.r[ins.rn] + cpu.r[ins.rm], ins, 2, True, False)


def x_ldrb_reg(cpu, ins):
    x_mem(cpu, cpu.r[ins.rn] + cpu.r[ins.rm], ins, 1, True, False)


def x_ldrsh_reg(cpu, ins):
    x_mem(cpu, cpu.r[ins.rn] + cpu.r[ins.rm], ins, 2, True, True)


def x_str_imm(cpu, ins):
    x_mem(cpu, cpu.r[ins.rn] + ins.imm, ins, 4, False, False)


def x_ldr_imm(cpu, ins):
    x_mem(cpu, cpu.r[ins.rn] + ins.imm, ins, 4, True, False)


def x_strb_imm(cpu, ins):
    x_mem(cpu, cpu.r[ins.rn] + ins.imm, ins, 1, False, False)


def x_ldrb_imm(cpu, ins):
    x_mem(cpu, cpu.r[ins.rn] + ins.imm, ins, 1, True, False)


def x_strh_imm(cpu, ins):
    x_mem(cpu, cpu.r[ins.rn] + ins.imm, ins, 2, False, False)


def x_ldrh_imm(cpu, ins):
    x_mem(cpu, cpu.r[ins.rn] + ins.imm, ins, 2, True, False)


def x_str_sp(cpu, ins):
    x_mem(cpu, cpu.r[13] + ins.imm, ins, 4, False, False)


def x_ldr_sp(cpu, ins):
    x_mem(cpu, cpu.r[13] + ins.imm, ins, 4, True, False)


def x_adr(cpu, ins):
    cpu.r[ins.rd] = ((cpu.r[15] & 0xFFFFFFFC) + ins.imm) & M32


def x_add_sp_imm(cpu, ins):
    cpu.r[ins.rd] = (cpu.r[13] + ins.imm) & M32


def x_add_sp_sp(cpu, ins):
    cpu.r[13] = (cpu.r[13] + ins.imm) & 0xFFFFFFFC


def x_sub_sp_sp(cpu, ins):
    cpu.r[13] = (cpu.r[13] - ins.imm) & 0xFFFFFFFC


def x_sxth(cpu, ins):
    cpu.r[ins.rd] = sext(cpu.r[ins.rm], 16)


def x_sxtb(cpu, ins):
    cpu.r[ins.rd] = sext(cpu.r[ins.rm], 8)


def x_uxth(cpu, ins):
    cpu.r[ins.rd] = cpu.r[ins.rm] & 0xFFFF


def x_uxtb(cpu, ins):
    cpu.r[ins.rd] = cpu.r[ins.rm] & 0xFF


def x_push(cpu, ins):
    regs = ins.regs
    count = bin(regs).count("1")
    addr = (cpu.r[13] - 4 * count) & M32
    start = addr
    for i in range(15):
        if regs >> i & 1:
            store(cpu, addr, 4, cpu.r[i])
            addr += 4
    cpu.r[13] = start
    cpu.cycles = 1 + count


def x_pop(cpu, ins):
    regs = ins.regs
    count = bin(regs).count("1")
    addr = cpu.r[13]
    values = []
    for i in range(16):
        if regs >> i & 1:
            values.append((i, load(cpu, addr, 4, False)))
            addr += 4
    cpu.r[13] = addr & 0xFFFFFFFC
    cpu.cycles = 1 + count
    for i, value in values:
        if i == 15:
            bx_write_pc(cpu, value)
            cpu.cycles = 3 + count
        else:
            cpu.r[i] = value


def x_stm(cpu, ins):
    regs = ins.regs
    addr = cpu.r[ins.rn]
    count = 0
    for i in range(8):
        if regs >> i & 1:
            store(cpu, addr, 4, cpu.r[i])
            addr = (addr + 4) & M32
            count += 1
    cpu.r[ins.rn] = addr
    cpu.cycles = 1 + count


def x_ldm(cpu, ins):
    regs = ins.regs
    addr = cpu.r[ins.rn]
    values = []
    for i in range(8):
        if regs >> i & 1:
            values.append((i, load(cpu, addr, 4, False)))
            addr = (addr + 4) & M32
    if not regs >> ins.rn & 1:
        cpu.r[ins.rn] = addr
    for i, value in values:
        cpu.r[i] = value
    cpu.cycles = 1 + len(values)


def x_cpsie(cpu, ins):
    cpu.primask = 0


def x_cpsid(cpu, ins):
    cpu.primask = 1


def x_rev(cpu, ins):
    v = cpu.r[ins.rm]
    cpu.r[ins.rd] = int.from_bytes(v.to_bytes(4, "little"), "big")


def x_rev16(cpu, ins):
    v = cpu.r[ins.rm]
    cpu.r[ins.rd] = ((v & 0x00FF00FF) << 8) | ((v >> 8) & 0x00FF00FF)


def x_revsh(cpu, ins):
    v = cpu.r[ins.rm]
    cpu.r[ins.rd] = sext(((v & 0xFF) << 8) | ((v >> 8) & 0xFF), 16)


def x_nop(cpu, ins):
    pass


def x_sleep(cpu, ins):
    cpu.cycles = CYC_SLEEP


def x_b_cond(cpu, ins):
    if cond_passed(cpu, ins.cond):
        cpu.next_pc = (cpu.r[15] + ins.imm) & M32
        cpu.cycles = CYC_BRANCH


def x_b(cpu, ins):
    cpu.next_pc = (cpu.r[15] + ins.imm) & M32
    cpu.cycles = CYC_BRANCH


def x_bl(cpu, ins):
    cpu.r[14] = cpu.r[15] | 1
    cpu.next_pc = (cpu.r[15] + ins.imm) & M32
    cpu.cycles = CYC_BL


def x_msr(cpu, ins):
    value = cpu.r[ins.rn]
    sysm = ins.sysm
    cpu.cycles = CYC_SYSREG
    if sysm < 8:
        if not sysm & 4:
            cpu.n = (value >> 31) & 1
            cpu.z = (value >> 30) & 1
            cpu.c = (value >> 29) & 1
            cpu.v = (value >> 28) & 1
    elif sysm == 8 or sysm == 9:
        if (sysm == 8) == msp_active(cpu):
            cpu.r[13] = value & 0xFFFFFFFC
        else:
            cpu.sp_alt = value & 0xFFFFFFFC
    elif sysm == 16:
        cpu.primask = value & 1
    elif sysm == 20:
        if cpu.ipsr == 0:
            spsel = (value >> 1) & 1
            if spsel != cpu.spsel:
                cpu.r[13], cpu.sp_alt = cpu.sp_alt, cpu.r[13]
                cpu.spsel = spsel


def x_mrs(cpu, ins):
    sysm = ins.sysm
    cpu.cycles = CYC_SYSREG
    if sysm < 8:
        value = 0
        if sysm & 1:
            value |= cpu.ipsr & 0x3F
        if not sysm & 4:
            value |= cpu.flags()
    elif sysm == 8 or sysm == 9:
        value = cpu.r[13] if (sysm == 8) == msp_active(cpu) else cpu.sp_alt
    elif sysm == 16:
        value = cpu.primask
    else:
        value = cpu.spsel << 1
    cpu.r[ins.rd] = value


def x_barrier(cpu, ins):
    cpu.cycles = CYC_BARRIER


HANDLERS = {
    "lsls_imm": x_lsls_imm, "lsrs_imm": x_lsrs_imm, "asrs_imm": x_asrs_imm,
    "adds_reg": x_adds_reg, "subs_reg": x_subs_reg,
    "adds_imm3": x_adds_imm, "subs_imm3": x_subs_imm,
    "adds_imm8": x_adds_imm, "subs_imm8": x_subs_imm,
    "movs_imm": x_movs_imm, "cmp_imm": x_cmp_imm,
    "ands": x_ands, "eors": x_eors, "lsls_reg": x_lsls_reg,
    "lsrs_reg": x_lsrs_reg, "asrs_reg": x_asrs_reg, "adcs": x_adcs,
    "sbcs": x_sbcs, "rors": x_rors, "tst": x_tst, "rsbs": x_rsbs,
    "cmp_reg": x_cmp_reg, "cmp_hi": x_cmp_reg, "cmn": x_cmn, "orrs": x_orrs,
    "muls": x_muls, "bics": x_bics, "mvns": x_mvns,
    "add_hi": x_add_hi, "mov_hi": x_mov_hi, "bx": x_bx, "blx": x_blx,
    "ldr_lit": x_ldr_lit,
    "str_reg": x_str_reg, "strh_reg": x_strh_reg, "strb_reg": x_strb_reg,
    "ldrsb_reg": x_ldrsb_reg, "ldr_reg": x_ldr_reg, "ldrh_reg": x_ldrh_reg,
    "ldrb_reg": x_ldrb_reg, "ldrsh_reg": x_ldrsh_reg,
    "str_imm": x_str_imm, "ldr_imm": x_ldr_imm, "strb_imm": x_strb_imm,
    "ldrb_imm": x_ldrb_imm, "strh_imm": x_strh_imm, "ldrh_imm": x_ldrh_imm,
    "str_sp": x_str_sp, "ldr_sp": x_ldr_sp,
    "adr": x_adr, "add_sp_imm": x_add_sp_imm,
    "add_sp_sp": x_add_sp_sp, "sub_sp_sp": x_sub_sp_sp,
    "sxth": x_sxth, "sxtb": x_sxtb, "uxth": x_uxth, "uxtb": x_uxtb,
    "push": x_push, "pop": x_pop, "stm": x_stm, "ldm": x_ldm,
    "cpsie": x_cpsie, "cpsid": x_cpsid,
    "rev": x_rev, "rev16": x_rev16, "revsh": x_revsh,
    "nop": x_nop, "yield": x_nop, "sev": x_nop, "wfe": x_sleep, "wfi": x_sleep,
    "b_cond": x_b_cond, "b": x_b, "bl": x_bl,
    "msr": x_msr, "mrs": x_mrs,
    "dmb": x_barrier, "dsb": x_barrier, "isb": x_barrier,
}


def step(cpu, ins, pc, width):
    """Execute ``ins`` fetched from ``pc``.

    Returns ``(status, fault)`` where ``fault`` is ``(addr, access)`` for a
    HardFault and ``None`` otherwise. ``cpu`` holds the successor state.
    """
    if not cpu.t:
        return HARDFAULT, (pc, "invstate")
    op = ins.op
    if op == "svc":
        return SVCALL, None
    if op == "bkpt":
        return BREAKPOINT, None
    handler = HANDLERS.get(op)
    if handler is None:
        return HARDFAULT, (pc, "undefined")
    cpu.r[15] = (pc + 4) & M32
    cpu.next_pc = (pc + width) & M32
    try:
        handler(cpu, ins)
    except Fault as exc:
        return HARDFAULT, (exc.addr, exc.access)
    cpu.r[15] = cpu.next_pc
    return COMPLETED, None
