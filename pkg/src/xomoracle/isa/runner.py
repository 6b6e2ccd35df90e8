"""Run a whole function on the bare executor (no XOM, no debugger)."""

from __future__ import annotations

from dataclasses import replace

from .instruction import Encoding, Instruction, decode, is_wide_prefix
from .machine import FlatMemory, OutcomeKind, SystemState, execute

RETURN_ADDRESS = 0xFFFF_FFFE  # lr sentinel; returning here ends the call


class CallFault(RuntimeError):
    pass


def _fetch(code: bytes, base: int, pc: int, cache: dict) -> Instruction:
    ins = cache.get(pc)
    if ins is None:
        off = pc - base
        if off < 0 or off + 2 > len(code):
            raise CallFault(f"fetch outside the code image at {pc:#x}")
        hw = int.from_bytes(code[off:off + 2], "little")
        ins = decode(Encoding.from_bytes(code, off)) if is_wide_prefix(hw) else decode(hw)
        cache[pc] = ins
    return ins


def call(code: bytes, base: int, entry: int, state: SystemState, *, max_steps: int = 100_000
         ) -> tuple[SystemState, int]:
    """Call ``entry`` with ``state`` until it returns; ``(state, steps)``.

    The code image is readable (literal pools work). Any exception or a
    step budget overrun raises ``CallFault``.
    """
    mem = FlatMemory(base, code)
    cache: dict[int, Instruction] = {}
    s = replace(state, pc=entry, lr=RETURN_ADDRESS | 1, epsr_t=1)
    for steps in range(max_steps):
        if s.pc == RETURN_ADDRESS:
            return s, steps
        out = execute(s, _fetch(code, base, s.pc, cache), mem)
        if out.kind is not OutcomeKind.COMPLETED:
            raise CallFault(f"{out.kind.value} at {s.pc:#x} ({out.fault})")
        s = out.state
    raise CallFault(f"no return within {max_steps} steps")
