"""ARMv6-M exception entry and the attacker-side reconstruction of the
interrupted state from the stacked frame."""

from __future__ import annotations

from dataclasses import dataclass, replace

from ..isa.machine import SystemState

FRAME_WORDS = 8  # r0-r3, r12, lr, pc, xPSR
EXC_RETURN_MSP = 0xFFFFFFF9
EXC_RETURN_PSP = 0xFFFFFFFD
SYSTICK_EXCEPTION = 15
XPSR_ALIGN_BIT = 1 << 9
XPSR_T_BIT = 1 << 24


class StackingFault(Exception):
    """The exception frame could not be written (sp outside SRAM)."""

    def __init__(self, frame_addr):
        super().__init__(f"frame at {frame_addr:#010x} outside SRAM")
        self.frame_addr = frame_addr


@dataclass(frozen=True)
class HandlerView:
    """What code running in the exception handler can see."""

    sram: bytes
    frame_addr: int
    regs: tuple[int, ...]  # r0-r12 as the handler finds them
    msp: int
    psp: int
    exc_return: int
    apsr: int
    primask: int
    ipsr: int


def stack_exception(state: SystemState, exception: int = SYSTICK_EXCEPTION) -> HandlerView:
    """Push the 8-word frame on the active stack and switch to the handler."""
    sp = state.sp
    frame = (sp - 4 * FRAME_WORDS) & 0xFFFF_FFF8
    realigned = (sp - 4 * FRAME_WORDS) & 4
    off = frame - state.sram_base
    if off < 0 or off + 4 * FRAME_WORDS > len(state.sram):
        raise StackingFault(frame)
    xpsr = state.apsr | (state.epsr_t << 24) | (state.ipsr & 0x3F)
    if realigned:
        xpsr |= XPSR_ALIGN_BIT
    words = (*state.regs[0:4], state.regs[12], state.lr, state.pc, xpsr)
    buf = bytearray(state.sram)
    for i, w in enumerate(words):
        buf[off + 4 * i:off + 4 * i + 4] = (w & 0xFFFFFFFF).to_bytes(4, "little")
    on_psp = bool(state.control & 2) and state.ipsr == 0
    if on_psp:
        msp, psp = state.sp_alt, frame
        exc_return = EXC_RETURN_PSP
    else:
        msp, psp = frame, state.sp_alt
        exc_return = EXC_RETURN_MSP
    return HandlerView(bytes(buf), frame, state.regs, msp, psp, exc_return,
                       state.apsr, state.primask, exception)


def reconstruct(view: HandlerView, input_state: SystemState) -> SystemState:
    """Rebuild the interrupted state from the handler's point of view.

    The frame overwrote 32 (or 36) bytes of SRAM; the attacker restores
    them from the state they applied, so stores the target made into that
    window are not visible.
    """
    base = input_state.sram_base
    off = view.frame_addr - base
    raw = view.sram[off:off + 4 * FRAME_WORDS]
    w = [int.from_bytes(raw[4 * i:4 * i + 4], "little") for i in range(FRAME_WORDS)]
    xpsr = w[7]
    pad = 4 if xpsr & XPSR_ALIGN_BIT else 0
    sp = view.frame_addr + 4 * FRAME_WORDS + pad
    on_psp = view.exc_return == EXC_RETURN_PSP
    sp_alt = view.msp if on_psp else view.psp
    sram = bytearray(view.sram)
    end = min(off + 4 * FRAME_WORDS + pad, len(sram))
    sram[off:end] = input_state.sram[off:end]
    regs = (w[0], w[1], w[2], w[3], *view.regs[4:12], w[4])
    return replace(
        input_state, regs=regs, sp=sp, lr=w[5], pc=w[6], apsr=xpsr & 0xF000_0000,
        sram=bytes(sram), epsr_t=(xpsr >> 24) & 1, primask=view.primask,
        control=2 if on_psp else 0, sp_alt=sp_alt, ipsr=xpsr & 0x3F)


def interrupt_observation(pre_interrupt: SystemState, input_state: SystemState) -> SystemState:
    """Convenience: stack then reconstruct (raises ``StackingFault``)."""
    return reconstruct(stack_exception(pre_interrupt), input_state)
