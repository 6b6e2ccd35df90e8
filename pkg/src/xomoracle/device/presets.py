"""Device presets modelled on the analysed microcontroller families."""

from __future__ import annotations

from dataclasses import dataclass

from .model import DeviceModel, DevicePolicy, LoadPolicy, UnknownPreset

MSP432_DEFAULT_KEY = 0x695A


@dataclass(frozen=True)
class Preset:
    name: str
    flash_base: int
    flash_size: int
    xom_ranges: tuple[tuple[int, int], ...]
    policy: DevicePolicy
    description: str


def _xom_at(base):
    # by default the protected window ends right after the probe address
    # base+0x806, so pc-relative literals of a target there lie outside it
    return ((base + 0x800, base + 0x808),)


PRESETS: dict[str, Preset] = {
    "stm32l0-like": Preset(
        "stm32l0-like", 0x0000_0000, 192 * 1024, _xom_at(0),
        DevicePolicy(single_step_in_xom=True),
        "PCROP; single-stepping inside XOM allowed; data reads of XOM fault"),
    "stm32f7-like": Preset(
        "stm32f7-like", 0x0800_0000, 512 * 1024, _xom_at(0x0800_0000),
        DevicePolicy(single_step_in_xom=False, itcm_alias=0x0020_0000),
        "PCROP; halting inside XOM ignored; ITCM alias readable by the debug port"),
    "kinetis-m0plus-like": Preset(
        "kinetis-m0plus-like", 0x0000_0000, 128 * 1024, _xom_at(0),
        DevicePolicy(single_step_in_xom=True, xom_load_policy=LoadPolicy.ALL_LOADS,
                     preceding_non_loads=0),
        "execute-only access control; every load inside XOM may read XOM"),
    "kinetis-m4-like": Preset(
        "kinetis-m4-like", 0x0000_0000, 512 * 1024, _xom_at(0),
        DevicePolicy(single_step_in_xom=True, xom_load_policy=LoadPolicy.ALL_LOADS,
                     preceding_non_loads=1),
        "as the M0+ part, but a non-load must retire after XOM entry before a load"),
    "msp432p4-like": Preset(
        "msp432p4-like", 0x0000_0000, 256 * 1024, _xom_at(0),
        DevicePolicy(single_step_in_xom=False, xom_load_policy=LoadPolicy.UNLOCKABLE,
                     unlock_key=MSP432_DEFAULT_KEY, auto_relock=True,
                     sram_debug_block=True),
        "IP protection; loads from XOM after an in-XOM key store, relocked on exit"),
    "tiva-like": Preset(
        "tiva-like", 0x0000_0000, 256 * 1024, _xom_at(0),
        DevicePolicy(single_step_in_xom=True),
        "execute-only flash; single-stepping allowed; data reads fault"),
}

FLAWLESS_PRESET = "stm32l0-like"


def preset_names() -> list[str]:
    return list(PRESETS)


def load_preset(name: str, image: bytes = b"", *, xom_ranges=None, policy_overrides=None,
                flash_base: int | None = None) -> DeviceModel:
    """Build a device from a preset. ``image`` is placed at the flash base."""
    try:
        p = PRESETS[name]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    policy = p.policy
    if policy_overrides:
        from dataclasses import replace
        policy = replace(policy, **policy_overrides)
    base = p.flash_base if flash_base is None else flash_base
    ranges = p.xom_ranges if xom_ranges is None else tuple(xom_ranges)
    return DeviceModel(image, flash_base=base, flash_size=p.flash_size, xom_ranges=ranges,
                       policy=policy, preset=name)
