from dataclasses import replace

import pytest

from xomoracle.device import load_preset
from xomoracle.isa import Classification, format_instruction, parse_instruction
from xomoracle.recovery import (
    INTERRUPT, SINGLE_STEP, CandidateSet, OracleUnavailable, Solver, enumerate_candidates,
    id_word, initial_input_state, pre_check, recover_instruction, recover_region, verify,
)

from conftest import demo_source, planted, protected

SRAM = 0x2000_0000


def texts(insns, addr=0x806):
    return {format_instruction(i, addr) for i in insns}


def recover(preset, text, strategy=SINGLE_STEP, **kw):
    dev, addr, ins = planted(preset, text)
    return Solver(dev, strategy, **kw).recover(addr), ins


# ------------------------------------------------------------ input states


def test_initial_memory_state():
    spec = initial_input_state("memory")
    r = spec.registers
    assert [r[f"r{i}"] for i in range(8)] == [0x80, SRAM, 0x84, SRAM, 0x88, SRAM, 0x8C, SRAM]
    assert r["sp"] == 0x2000_00C0
    s = spec.to_state(0x806)
    words = [int.from_bytes(s.sram[4 * k:4 * k + 4], "little") for k in range(40)]
    assert words == [id_word(k) for k in range(40)]
    assert len(set(words)) == 40
    assert not set(words) & set(s.regs)


def test_initial_push_pop_and_branch_states():
    pp = initial_input_state("push-pop").registers
    assert [pp[f"r{i}"] for i in range(8)] == list(range(0xF0, 0xF8)) and pp["lr"] == 0xF8
    br = initial_input_state("branch").registers
    assert (br["r0"], br["r6"], br["r7"], br["lr"]) == (0x2000_00E0, 0x2000_0050, 0x2000_0060, 0x2000_00D0)
    assert all(v & 1 == 0 for k, v in br.items() if k != "sp")


# ------------------------------------------------------------ solver steps


def test_enumerate_add_immediate_pair():
    dev, addr, _ = planted("stm32l0-like", "adds r0, #0x1f")
    sol = Solver(dev)
    s = replace(sol.initial_state(addr), regs=(0x23,) + sol.initial_state(addr).regs[1:])
    obs = sol.oracle.probe(s)
    found = texts(enumerate_candidates(sol.index, s, obs))
    assert "adds r0, #31" in found
    assert "adds r0, r0, #0" not in found and len(found) > 1


def test_enumerate_worked_example_iteration_one():
    dev, addr, _ = planted("stm32l0-like", "ldr r2, [r5, #20]")
    sol = Solver(dev)
    s = sol.initial_state(addr)
    found = enumerate_candidates(sol.index, s, sol.oracle.probe(s))
    assert texts(found) == {f"ldr r2, [r{n}, #20]" for n in (1, 3, 5, 7)}


def test_pre_check_rules():
    s = Solver(load_preset("stm32l0-like")).initial_state(0x806)
    cands = CandidateSet(tuple(parse_instruction(t, 0x806) for t in (
        "movs r0, #1", "bl 0x900", "b 0x900", "mov r0, r1", "adds r1, #0")))
    post = replace(s, regs=(1,) + s.regs[1:], pc=0x808)
    obs = ("ok", (post.regs, post.sp, post.lr, post.pc, s.apsr | 0x0000_0000, post.sram))
    kept = texts(pre_check(cands, s, obs))
    assert "bl 0x900" not in kept and "b 0x900" not in kept
    assert "mov r0, r1" in kept
    flagged = ("ok", (post.regs, post.sp, post.lr, post.pc, s.apsr ^ 0x4000_0000, post.sram))
    assert texts(pre_check(cands, s, flagged)) == {"movs r0, #1", "adds r1, #0"}


def test_verify_drops_wrong_destination():
    dev, addr, _ = planted("stm32l0-like", "movs r2, #7")
    sol = Solver(dev)
    s = sol.initial_state(addr)
    obs = sol.oracle.probe(s)
    cands = CandidateSet((parse_instruction("movs r2, #7"), parse_instruction("movs r3, #7")))
    assert texts(verify(cands, sol.predictor, s, obs)) == {"movs r2, #7"}


# ------------------------------------------------------------ whole instructions


def test_worked_example_two_iterations():
    dev, addr, _ = planted("stm32l0-like", "ldr r2, [r5, #20]")
    seen = []
    r = Solver(dev, trace=lambda i, s, o, node: seen.append((s, o, texts(node.cands)))).recover(addr)
    assert r.text == "ldr r2, [r5, #20]" and r.iterations == 2
    assert r.classification is Classification.UNIQUE
    assert seen[0][2] == {f"ldr r2, [r{n}, #20]" for n in (1, 3, 5, 7)}
    second = seen[1][0]
    assert [second.regs[n] - SRAM for n in (1, 3, 5, 7)] == [0, 4, 8, 12]
    assert seen[1][1][1][0][2] == id_word(7)


def test_push_writes_f4_and_f7():
    dev, addr, _ = planted("stm32l0-like", "push {r4, r7}")
    s = initial_input_state("push-pop").to_state(addr)
    dev.apply_state(s)
    out = dev.single_step(addr).state
    off = out.sp - SRAM
    assert [int.from_bytes(out.sram[off + 4 * k:off + 4 * k + 4], "little") for k in range(2)] == [0xF4, 0xF7]
    r, ins = recover("stm32l0-like", "push {r4, r7}")
    assert r.instruction == ins and r.classification is Classification.UNIQUE


_MOVS = {f"mov r{i}, r{i}" for i in range(13)} | {"mov sp, sp", "mov lr, lr"}


@pytest.mark.parametrize("text,members", [
    ("dmb sy", {"dmb sy", "dsb sy", "isb sy"}),
    ("nop", {"nop", "yield", "sev", "add sp, #0", "sub sp, #0"} | _MOVS),
])
def test_indistinguishable_groups(text, members):
    r, _ = recover("stm32l0-like", text)
    assert r.classification is Classification.INDISTINGUISHABLE
    assert texts(r.members) == members


@pytest.mark.parametrize("text", ["muls r3, r4, r3", "uxth r1, r6", "rev16 r2, r7", "sxtb r0, r5",
                                  "msr primask, r2", "mrs r3, control",
                                  "bl #0x7f6", "cmp r2, #17", "bne #0x16", "add r2, pc, #8",
                                  "ldr r0, [pc, #16]", "pop {r1, r4, pc}", "blx r3"])
def test_unique_on_both_strategies(text):
    r, ins = recover("stm32l0-like", text)
    assert r.instruction == ins and r.classification is Classification.UNIQUE, r.text
    r, ins = recover("stm32f7-like", text, INTERRUPT)
    assert ins in r.members and r.classification is Classification.UNIQUE, r.text


@pytest.mark.parametrize("text", ["cpsie i", "cpsid i", "nop", "ldrsb r1, [r2, r2]", "ldrsb r1, [r4, r4]"])
def test_interrupt_regressions(text):
    # cps under a masked interrupt, and signed byte loads whose pointer sits in the ID window
    r, ins = recover("stm32f7-like", text, INTERRUPT)
    assert ins in r.members and r.error is None


def test_status_reads_under_interrupt():
    r, _ = recover("stm32l0-like", "mrs r1, primask")
    assert r.classification is Classification.UNIQUE
    # an observable interrupt implies thread mode with PRIMASK clear
    r, ins = recover("stm32f7-like", "mrs r1, primask", INTERRUPT)
    assert r.classification is Classification.INDISTINGUISHABLE
    assert texts(r.members) == {"mrs r1, primask", "mrs r1, ipsr", "mrs r1, epsr", "mrs r1, iepsr"}


def test_functional_alias_keeps_both_orders():
    r, ins = recover("stm32l0-like", "adds r1, r2, r3")
    assert r.classification is Classification.FUNCTIONAL_ALIAS
    assert texts(r.members) == {"adds r1, r2, r3", "adds r1, r3, r2"}


def test_svc_immediate_is_unrecoverable():
    r, _ = recover("stm32l0-like", "svc #42")
    assert r.classification is Classification.IMMEDIATE_UNRECOVERABLE


def test_single_step_unavailable_on_f7():
    dev, addr, _ = planted("stm32f7-like", "nop")
    with pytest.raises(OracleUnavailable):
        recover_instruction(dev, addr, SINGLE_STEP)


def test_trace_and_memo_reuse():
    dev, addr, _ = planted("stm32l0-like", "ldr r2, [r5, #20]")
    sol = Solver(dev)
    first = sol.recover(addr)
    again = sol.recover(addr)
    assert first == again


# ------------------------------------------------------------ regions


def test_region_add_ldr_bx():
    dev, prog = protected("stm32l0-like", "adds r0, r1, r2\n ldr r3, [r0, #4]\n bx lr")
    listing = recover_region(dev, 0x800, 0x806)
    assert all(i in e.members for (_, i), e in zip(prog.instructions(), listing.entries))
    assert len(listing.entries) == 3 and listing.class_counts()["FunctionalAlias"] == 1


def test_region_bl_consumes_two_halfwords_and_literal_is_data():
    src = "bl next\nnext:\n pop {r4, pc}\n .align 2\n .word 0x20000000\n .word 0xffffffff"
    dev, prog = protected("stm32l0-like", src)
    listing = recover_region(dev, 0x800, 0x800 + len(prog.image))
    addrs = [e.address for e in listing.entries]
    assert addrs[:2] == [0x800, 0x804]
    by = {e.address: e for e in listing.entries}
    assert by[0x800].width == 4 and by[0x800].instruction == prog.instructions()[0][1]
    assert by[0x80C].classification is Classification.DATA
    assert listing.total_queries == sum(e.queries for e in listing.entries)


def test_region_pop_pc_after_other_entries():
    dev, prog = protected("stm32l0-like", "push {r4, lr}\n movs r4, #1\n pop {r4, pc}")
    listing = recover_region(dev, 0x800, 0x806)
    assert [e.text for e in listing.entries] == ["push {r4, lr}", "movs r4, #1", "pop {r4, pc}"]


def test_listing_to_source_reassembles():
    from xomoracle.isa import assemble
    dev, prog = protected("stm32l0-like", demo_source("convolution.s"))
    listing = recover_region(dev, 0x800, 0x800 + len(prog.image))
    assert not listing.failures
    again = assemble(listing.to_source(), 0x800)
    assert len(again.image) == len(prog.image)
