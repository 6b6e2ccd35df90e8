"""Compare the compiled execution kernel with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Three levels are timed for each kernel: the bare ``step`` call, the full
``execute`` wrapper (state in, state out), and single-instruction recovery
on the stm32l0-like preset.
"""

from __future__ import annotations

import argparse
import json
import time

from xomoracle.device import load_preset
from xomoracle.isa import _exec, machine
from xomoracle.isa.assembler import assemble
from xomoracle.isa.instruction import all_16bit
from xomoracle.isa.machine import SystemState, execute
from xomoracle.recovery import SINGLE_STEP, Solver

try:
    from xomoracle.isa import _cexec
except ImportError:
    _cexec = None

TARGETS = ("adds r0, r1, r2", "ldr r2, [r5, #20]", "push {r4, r7, lr}", "bl 0x1000",
           "muls r3, r4", "rev16 r1, r6", "cmp r2, #17", "dmb sy")


def _state():
    return SystemState(regs=tuple(0x2000_0100 + 4 * i for i in range(13)), sp=0x2000_0400,
                       lr=0x101, pc=0x800, sram=bytes(0x2000), sram_base=0x2000_0000)


def bench_step(kernel, instructions, state) -> float:
    regs = list(state.regs) + [state.sp, state.lr, state.pc]
    t = time.perf_counter()
    for ins in instructions:
        cpu = kernel.Cpu(list(regs), state.apsr, 1, 0, 0, 0, 0, state.sram, state.sram_base,
                         machine.NoMemory())
        kernel.step(cpu, ins, state.pc, ins.width)
    return (time.perf_counter() - t) / len(instructions)


def bench_execute(instructions, state) -> float:
    t = time.perf_counter()
    for ins in instructions:
        execute(state, ins)
    return (time.perf_counter() - t) / len(instructions)


def bench_recover() -> float:
    image = bytearray(0x1000)
    t = 0.0
    for src in TARGETS:
        prog = assemble(src, 0x806)
        image[0x806:0x806 + len(prog.image)] = prog.image
        dev = load_preset("stm32l0-like", bytes(image))
        solver = Solver(dev, SINGLE_STEP)
        t0 = time.perf_counter()
        solver.recover(0x806)
        t += time.perf_counter() - t0
    return t / len(TARGETS)


def run(repeat: int = 3) -> dict:
    instructions = [i for i in all_16bit() if not i.is_undefined]
    state = _state()
    kernels = [("python", _exec)] + ([("compiled", _cexec)] if _cexec else [])
    saved = machine._kernel
    results = {}
    try:
        for name, kernel in kernels:
            machine._kernel = kernel
            results[name] = {
                "step_us": min(bench_step(kernel, instructions, state) for _ in range(repeat)) * 1e6,
                "execute_us": min(bench_execute(instructions, state) for _ in range(repeat)) * 1e6,
                "recover_ms": min(bench_recover() for _ in range(repeat)) * 1e3,
            }
    finally:
        machine._kernel = saved
    return results


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    res = run(args.repeat)
    print(f"{'kernel':<10}{'step (us)':>12}{'execute (us)':>15}{'recover (ms)':>15}")
    for name, r in res.items():
        print(f"{name:<10}{r['step_us']:>12.2f}{r['execute_us']:>15.2f}{r['recover_ms']:>15.1f}")
    if "compiled" in res:
        py, c = res["python"], res["compiled"]
        print("speedup   " + "".join(f"{py[k] / c[k]:>{w}.2f}x"
                                     for k, w in (("step_us", 11), ("execute_us", 14), ("recover_ms", 14))))
    else:
        print("compiled kernel not built; install with Cython available")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(res, fh, indent=2)


if __name__ == "__main__":
    main()
