import json
import random

import pytest

from xomoracle.device import MSP432_DEFAULT_KEY, load_preset
from xomoracle.exploit import (
    ChannelUnavailable, ExtractionFault, GadgetKind, NoGadget, RelockInterference,
    candidate_gadgets, dump, extract_via_gadget, extract_via_itcm_alias, find_load_gadget,
    rules_for, verify_dump,
)
from xomoracle.exploit.gadgets import entry_load
from xomoracle.isa import Classification, assemble, parse_instruction
from xomoracle.recovery import INTERRUPT, SINGLE_STEP, RecoveredInstruction, recover_region

GADGETS = {
    "kinetis-m0plus-like": ("adds r2, r2, #1\n ldr r0, [r1]\n bx lr", GadgetKind.BARE_LOAD),
    "kinetis-m4-like": ("ldr r2, [r3]\n mov r1, r0\n ldr r0, [r1]\n bx lr", GadgetKind.PRECEDED_LOAD),
    "msp432p4-like": ("strh r2, [r0]\n ldr r3, [r1]\n bx lr", GadgetKind.UNLOCK_THEN_LOAD),
}
SECRET = 0x840


def firmware(preset, src, secret: bytes):
    prog = assemble(src, 0x800)
    img = bytes(0x800) + prog.image
    img += bytes(SECRET - len(img)) + secret
    dev = load_preset(preset, img, xom_ranges=[(0x800, SECRET + len(secret))])
    return dev, prog


def recovered(dev, prog):
    strategy = SINGLE_STEP if dev.policy.single_step_in_xom else INTERRUPT
    return recover_region(dev, 0x800, 0x800 + len(prog.image), strategy)


@pytest.mark.parametrize("preset", list(GADGETS))
def test_gadget_extraction_is_byte_exact(preset):
    src, kind = GADGETS[preset]
    secret = random.Random(preset).randbytes(1024)
    dev, prog = firmware(preset, src, secret)
    g = find_load_gadget(recovered(dev, prog), dev)
    assert g.kind is kind
    if kind is GadgetKind.PRECEDED_LOAD:
        assert g.preceding == 1
    assert extract_via_gadget(dev, g, SECRET, SECRET + 1024) == secret


def test_relock_mid_sequence_fails():
    src, _ = GADGETS["msp432p4-like"]
    dev, prog = firmware("msp432p4-like", src, bytes(range(64)))
    g = find_load_gadget(recovered(dev, prog), dev)
    with pytest.raises(RelockInterference):
        extract_via_gadget(dev, g, SECRET, SECRET + 4, split=1)


def test_wrong_key_fails():
    src, _ = GADGETS["msp432p4-like"]
    dev, prog = firmware("msp432p4-like", src, bytes(range(64)))
    g = find_load_gadget(recovered(dev, prog), dev)
    with pytest.raises(ExtractionFault):
        extract_via_gadget(dev, g, SECRET, SECRET + 4, key=MSP432_DEFAULT_KEY ^ 1)


def test_m4_needs_the_preceding_non_load():
    # a bare load right at XOM entry is not a gadget on the M4 part
    dev, prog = firmware("kinetis-m4-like", "ldr r0, [r1]\n bx lr", bytes(16))
    with pytest.raises(NoGadget):
        find_load_gadget(recovered(dev, prog), dev)
    forced = next(candidate_gadgets(recovered(dev, prog), "kinetis-m0plus-like"))
    with pytest.raises(ExtractionFault):
        extract_via_gadget(dev, forced, SECRET, SECRET + 4)


def test_alias_read_on_f7():
    rng = random.Random(7)
    dev = load_preset("stm32f7-like", bytes(0x800) + rng.randbytes(0x1000),
                      xom_ranges=[(0x0800_0800, 0x0800_1000)])
    assert extract_via_itcm_alias(dev, 0x0800_07F0, 0x0800_1010) == dev.flash[0x7F0:0x1010]
    d = dump(dev, 0x0800_0800, 0x0800_0C00)
    assert d.channel == "ItcmAlias" and d.data == dev.flash[0x800:0xC00]
    with pytest.raises(ChannelUnavailable):
        extract_via_itcm_alias(load_preset("stm32l0-like"), 0x800, 0x808)


def test_flawless_preset_yields_nothing():
    dev, prog = firmware("stm32l0-like", "ldr r0, [r1, #8]\n bx lr", bytes(range(256)))
    assert rules_for(dev).kind is None
    with pytest.raises(NoGadget):
        dump(dev, SECRET, SECRET + 256)
    # even a gadget that works elsewhere faults here
    for g in candidate_gadgets(recovered(dev, prog), "kinetis-m0plus-like"):
        with pytest.raises(ExtractionFault):
            extract_via_gadget(dev, g, SECRET, SECRET + 8)


def test_dump_manifest_and_verification(tmp_path):
    secret = random.Random(1).randbytes(256)
    dev, _ = firmware("kinetis-m0plus-like", "ldr r0, [r1, #8]\n bx lr", secret)
    d = dump(dev, SECRET, SECRET + 256)
    assert d.data == secret and d.queries > 0
    path = tmp_path / "dump.bin"
    d.write(path)
    manifest = json.loads((tmp_path / "dump.bin.json").read_text())
    assert manifest["sha256"] == d.sha256 and manifest["channel"] == "BareLoad"
    assert verify_dump(path)
    path.write_bytes(b"x" + secret[1:])
    assert not verify_dump(path)


@pytest.mark.parametrize("src,lo,hi", [
    ("ldrb r0, [r1, r2]\n bx lr", SECRET + 3, SECRET + 17),
    ("ldm r1!, {r0, r2, r3}\n bx lr", SECRET + 2, SECRET + 0xF9),
    ("ldrh r5, [r6, #6]\n bx lr", SECRET + 1, SECRET + 9),
])
def test_other_load_shapes(src, lo, hi):
    secret = random.Random(src).randbytes(256)
    dev, _ = firmware("kinetis-m0plus-like", src, secret)
    d = dump(dev, lo, hi)
    assert d.data == secret[lo - SECRET:hi - SECRET]


def test_ambiguous_load_is_not_used():
    # a signed vs unsigned ambiguity would corrupt the dump, so only classes
    # whose members all read memory the same way qualify
    ldrb, ldrsb = parse_instruction("ldrb r0, [r1, r2]"), parse_instruction("ldrsb r0, [r1, r2]")
    alias = parse_instruction("ldrb r0, [r2, r1]")
    mixed = RecoveredInstruction(0x800, ldrb, Classification.INDISTINGUISHABLE, (ldrsb,))
    commuted = RecoveredInstruction(0x800, ldrb, Classification.FUNCTIONAL_ALIAS, (alias,))
    assert entry_load(mixed) is None
    assert entry_load(commuted) == ldrb
