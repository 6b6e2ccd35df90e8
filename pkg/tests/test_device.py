import json
import random
from dataclasses import replace

import pytest

from xomoracle.device import (
    ConfigError, DeviceModel, DevicePolicy, GeometryMismatch, LoadPolicy, MSP432_DEFAULT_KEY,
    PRESETS, ReadBlocked, ResponseKind, UnknownPreset, Unmapped, device_config,
    device_from_config, load_config, load_preset, reconstruct, stack_exception,
)
from xomoracle.isa import SystemState, all_16bit, encode, parse_instruction

from conftest import filler_image, planted, protected

SRAM = 0x2000_0000


def state(dev, **kw) -> SystemState:
    return replace(dev.blank_state(), **kw)


# ------------------------------------------------------------ presets


def test_preset_policies():
    f7 = PRESETS["stm32f7-like"].policy
    assert not f7.single_step_in_xom and f7.itcm_alias == 0x0020_0000
    m4 = PRESETS["kinetis-m4-like"].policy
    assert m4.xom_load_policy is LoadPolicy.ALL_LOADS and m4.preceding_non_loads == 1
    msp = PRESETS["msp432p4-like"].policy
    assert msp.xom_load_policy is LoadPolicy.UNLOCKABLE and msp.auto_relock
    assert msp.unlock_key == MSP432_DEFAULT_KEY
    assert PRESETS["stm32l0-like"].policy.single_step_in_xom
    with pytest.raises(UnknownPreset):
        load_preset("stm32h7-like")


def test_model_invariants():
    with pytest.raises(ValueError):
        DeviceModel(bytes(0x100), xom_ranges=[(0x80, 0x200)])
    with pytest.raises(ValueError):
        DeviceModel(bytes(0x100), sram_base=0x80)
    with pytest.raises(ValueError):
        DevicePolicy(xom_load_policy=LoadPolicy.UNLOCKABLE)


# ------------------------------------------------------------ apply_state


def test_apply_state_reads_back_and_clears_residue():
    dev = load_preset("stm32l0-like")
    s = state(dev, regs=tuple(range(1, 14)), sp=SRAM + 0x100, lr=0x123,
              sram=bytes(range(256)) * (0x2000 // 256))
    dev.apply_state(s)
    assert dev.state == s
    dev.apply_state(dev.blank_state())
    assert dev.state == dev.blank_state()
    with pytest.raises(GeometryMismatch):
        dev.apply_state(replace(s, sram=bytes(16)))


def test_query_independence():
    dev, addr, _ = planted("stm32l0-like", "str r1, [r0, #4]")
    s = state(dev, regs=(SRAM + 0x40, 0xABCD) + (0,) * 11)
    dev.apply_state(s)
    first = dev.single_step(addr)
    dev.single_step(addr)  # leaves residue in SRAM and registers
    dev.apply_state(s)
    assert dev.single_step(addr) == first


# ------------------------------------------------------------ single_step


def test_add_immediate_single_step():
    dev, addr, _ = planted("stm32l0-like", "adds r0, #0x1f")
    assert addr == 0x0000_0806
    dev.apply_state(state(dev, regs=(0x23,) + (0,) * 12, pc=0x806))
    r = dev.single_step(0x806)
    assert r.kind is ResponseKind.STEPPED
    assert r.state.regs[0] == 0x42 and r.state.pc == 0x0000_0808


def test_step_denied_on_f7():
    dev, addr, _ = planted("stm32f7-like", "adds r0, #1")
    s = dev.blank_state()
    dev.apply_state(s)
    r = dev.single_step(addr)
    assert r.kind is ResponseKind.STEP_DENIED and dev.state == s
    # outside XOM the debugger works normally
    assert dev.single_step(dev.flash_base + 0x900).kind is not ResponseKind.STEP_DENIED


def test_pc_relative_literal_in_xom_on_kinetis():
    words = (0xCAFEF00D).to_bytes(4, "little")
    for preset, kind in (("kinetis-m0plus-like", ResponseKind.STEPPED),
                         ("stm32l0-like", ResponseKind.FAULTED)):
        dev, _ = protected(preset, "ldr r0, [pc, #0]\n nop", tail=words)
        dev.apply_state(dev.blank_state())
        r = dev.single_step(0x800)
        assert r.kind is kind, preset
        if kind is ResponseKind.STEPPED:
            assert r.state.regs[0] == 0xCAFEF00D
        else:
            assert r.exception == "hardfault"


def test_data_read_of_xom_faults_on_l0():
    dev, addr, _ = planted("stm32l0-like", "ldr r0, [r1, #0]")
    dev.apply_state(state(dev, regs=(0, 0x800) + (0,) * 11))
    r = dev.single_step(addr)
    assert r.kind is ResponseKind.FAULTED and r.fault.address == 0x800


def test_svc_and_breakpoint_exception_names():
    for text, name in (("svc #1", "svcall"), ("bkpt #0", "breakpoint"), ("udf #0", "hardfault")):
        dev, addr, _ = planted("stm32l0-like", text)
        dev.apply_state(dev.blank_state())
        assert dev.single_step(addr).exception == name


# ------------------------------------------------------------ run_until_interrupt


def _random_state(rng, dev):
    return state(dev, regs=tuple(rng.choice([SRAM + 0x400 + 4 * rng.randrange(64), rng.getrandbits(32),
                                             rng.randrange(32)]) for _ in range(13)),
                 sp=SRAM + 0x1000, lr=0x901, apsr=rng.getrandbits(4) << 28,
                 sram=rng.randbytes(0x2000))


def test_interrupt_with_exact_tick_matches_single_step():
    rng = random.Random(5)
    base = load_preset("tiva-like", filler_image())
    checked = 0
    for ins in rng.sample([i for i in all_16bit() if not i.is_undefined], 600):
        dev = base.with_flash(0x806, encode(ins).to_bytes())
        s = _random_state(rng, dev)
        dev.apply_state(s)
        step = dev.single_step(0x806)
        if step.kind is not ResponseKind.STEPPED or ins.op in ("cpsid", "cpsie", "msr"):
            continue
        dev.apply_state(s)
        irq = dev.run_until_interrupt(0x806, step.cycles)
        if irq.kind is ResponseKind.FAULTED:
            assert irq.exception == "lockup"  # the frame push itself failed
            continue
        assert irq.kind is ResponseKind.INTERRUPT_TAKEN and irq.retired == 1, ins
        assert irq.state.key == step.state.key, ins
        checked += 1
    assert checked > 400


def test_interrupt_before_first_instruction():
    dev, addr, _ = planted("stm32l0-like", "ldr r0, [r1, #0]")
    s = state(dev, regs=(7, SRAM) + (0,) * 11, sp=SRAM + 0x100)
    dev.apply_state(s)
    r = dev.run_until_interrupt(addr, 1)  # a load needs 2 cycles
    assert r.kind is ResponseKind.INTERRUPT_TAKEN and r.retired == 0
    assert r.state == replace(s, pc=addr)


def test_runaway_after_interrupts_are_masked():
    dev, _ = protected("stm32l0-like", "cpsid i\nloop:\n adds r0, #1\n b loop")
    dev.apply_state(state(dev, sp=SRAM + 0x100))
    r = dev.run_until_interrupt(0x800, 1, guard=64)
    assert r.kind is ResponseKind.RUNAWAY and r.retired == 64


def test_stacking_round_trip():
    rng = random.Random(9)
    for _ in range(200):
        s = replace(_random_state(rng, load_preset("stm32l0-like")), pc=0x806 + 2 * rng.randrange(64))
        view = stack_exception(s)
        assert reconstruct(view, s) == s


def test_folding_retires_pairs_within_one_boundary():
    src = "\n".join(["adds r0, #1", "adds r1, #1"] * 8)
    dev, _ = protected("stm32f7-like", src)
    dev = dev.with_policy(folding=True, folding_seed=3)
    dev.apply_state(state(dev, sp=SRAM + 0x100))
    retired = {dev.run_until_interrupt(0x0800_0800, t).retired for t in range(1, 8)}
    plain, _ = protected("stm32f7-like", src)
    plain.apply_state(state(plain, sp=SRAM + 0x100))
    assert [plain.run_until_interrupt(0x0800_0800, t).retired for t in range(1, 8)] == list(range(1, 8))
    assert retired != set(range(1, 8))


# ------------------------------------------------------------ debug_read


def test_debug_read_filters():
    f7 = load_preset("stm32f7-like", filler_image())
    with pytest.raises(ReadBlocked):
        f7.debug_read(0x0800_0804, 1)
    assert f7.debug_read(0x0020_0804, 4) == filler_image()[0x804:0x808]
    l0 = load_preset("stm32l0-like", filler_image())
    with pytest.raises(Unmapped):
        l0.debug_read(0x0020_0804, 1)
    assert l0.debug_read(0x100, 4) == filler_image()[0x100:0x104]


def test_flawless_device_never_reveals_xom():
    dev = load_preset("stm32l0-like", filler_image())
    lo, hi = dev.xom_ranges[0]
    for a in range(lo - 8, hi + 8):
        for n in (1, 2, 4, 16):
            try:
                data = dev.debug_read(a, n)
            except (ReadBlocked, Unmapped):
                continue
            assert not any(lo <= a + i < hi for i in range(len(data)))


def test_msp432_blocks_sram_reads_while_in_xom():
    dev, _ = protected("msp432p4-like", "adds r0, #1\n adds r0, #1")
    dev.apply_state(state(dev, pc=0x800))
    with pytest.raises(ReadBlocked):
        dev.debug_read(SRAM, 4)
    dev.apply_state(state(dev, pc=0x900))
    assert dev.debug_read(SRAM, 4) == bytes(4)


# ------------------------------------------------------------ unlock register


def _msp(src, key=MSP432_DEFAULT_KEY):
    words = (0x11223344).to_bytes(4, "little")
    dev, prog = protected("msp432p4-like", src, tail=words)
    unlock = dev.memory_map.unlock_register
    s = state(dev, regs=(unlock, prog.labels["lit"], key) + (0,) * 10, sp=SRAM + 0x100)
    return dev, s


_UNLOCK_SRC = "strh r2, [r0, #0]\n ldr r3, [r1, #0]\n b .\n .align 2\nlit:"


def test_unlock_then_load():
    dev, s = _msp(_UNLOCK_SRC)
    dev.apply_state(s)
    r = dev.run_until_interrupt(0x800, 4)
    assert r.retired == 2 and r.state.regs[3] == 0x11223344


def test_wrong_key_stays_locked():
    dev, s = _msp(_UNLOCK_SRC, MSP432_DEFAULT_KEY ^ 1)
    dev.apply_state(s)
    r = dev.run_until_interrupt(0x800, 4)
    assert r.kind is ResponseKind.FAULTED and r.retired == 1


def test_byte_store_does_not_unlock():
    dev, s = _msp("strb r2, [r0, #0]\n ldr r3, [r1, #0]\n b .\n .align 2\nlit:")
    dev.apply_state(s)
    assert dev.run_until_interrupt(0x800, 4).kind is ResponseKind.FAULTED


def test_relock_after_leaving_xom():
    dev, s = _msp(_UNLOCK_SRC)
    dev.apply_state(s)
    first = dev.run_until_interrupt(0x800, 2)  # interrupted after the store
    assert first.kind is ResponseKind.INTERRUPT_TAKEN and first.retired == 1
    r = dev.run_until_interrupt(0x802, 2)
    assert r.kind is ResponseKind.FAULTED


# ------------------------------------------------------------ config files


def test_config_round_trip(tmp_path):
    img = tmp_path / "fw.bin"
    img.write_bytes(filler_image())
    cfg = {"preset": "kinetis-m4-like", "flash_image_path": "fw.bin",
           "xom_ranges": [["0x800", "0xc00"]], "policy": {"folding": True}}
    path = tmp_path / "dev.json"
    path.write_text(json.dumps(cfg))
    dev = load_config(path)
    assert dev.xom_ranges == ((0x800, 0xC00),) and dev.policy.folding
    assert dev.policy.preceding_non_loads == 1
    again = device_from_config(device_config(dev), image=dev.flash)
    assert again.memory_map == dev.memory_map


@pytest.mark.parametrize("cfg", [
    {"preset": "nope"}, {"preset": "stm32l0-like", "bogus": 1},
    {"preset": "stm32l0-like", "xom_ranges": [["0x0", "0x99999999"]]},
    {"preset": "stm32l0-like", "policy": {"xom_load_policy": "Sometimes"}},
])
def test_config_errors(cfg):
    with pytest.raises(ConfigError):
        device_from_config(cfg)
