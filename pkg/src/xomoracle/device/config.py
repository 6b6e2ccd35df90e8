"""JSON device configuration files.

Example::

    {
      "preset": "kinetis-m4-like",
      "flash_image_path": "firmware.bin",
      "flash_base": "0x0",
      "xom_ranges": [["0x800", "0xc00"]],
      "policy": {"folding": false}
    }

Numbers may be JSON integers or ``0x`` strings. Relative image paths are
resolved against the config file's directory.
"""

from __future__ import annotations

import json
from dataclasses import fields, replace
from pathlib import Path

from .model import DeviceModel, DevicePolicy, LoadPolicy
from .presets import PRESETS, load_preset


class ConfigError(ValueError):
    pass


_POLICY_FIELDS = {f.name for f in fields(DevicePolicy)}
_TOP_FIELDS = {"preset", "flash_base", "flash_size", "flash_image_path", "xom_ranges",
               "sram_base", "sram_size", "policy", "name"}


def _num(value, what):
    if isinstance(value, bool):
        raise ConfigError(f"{what}: expected a number")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value, 0)
        except ValueError:
            pass
    raise ConfigError(f"{what}: expected a number, got {value!r}")


def _policy(raw: dict, base: DevicePolicy) -> DevicePolicy:
    unknown = set(raw) - _POLICY_FIELDS
    if unknown:
        raise ConfigError(f"unknown policy fields: {', '.join(sorted(unknown))}")
    changes = {}
    for key, value in raw.items():
        if key == "xom_load_policy":
            try:
                changes[key] = LoadPolicy(value)
            except ValueError:
                raise ConfigError(f"xom_load_policy must be one of "
                                  f"{[p.value for p in LoadPolicy]}") from None
        elif key in ("unlock_key", "itcm_alias"):
            changes[key] = None if value is None else _num(value, key)
        elif key in ("preceding_non_loads", "folding_seed"):
            changes[key] = _num(value, key)
        else:
            if not isinstance(value, bool):
                raise ConfigError(f"{key}: expected true or false")
            changes[key] = value
    try:
        return replace(base, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def device_from_config(cfg: dict, root: Path | None = None, *, image: bytes | None = None) -> DeviceModel:
    """Build a device from a parsed config mapping."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - _TOP_FIELDS
    if unknown:
        raise ConfigError(f"unknown config fields: {', '.join(sorted(unknown))}")
    root = root or Path(".")
    if image is None:
        path = cfg.get("flash_image_path")
        if path is None:
            image = b""
        else:
            p = Path(path)
            if not p.is_absolute():
                p = root / p
            image = p.read_bytes()  # OSError propagates to the caller
    preset = cfg.get("preset")
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    base_policy = PRESETS[preset].policy if preset else DevicePolicy()
    policy = _policy(cfg.get("policy", {}), base_policy)
    ranges = None
    if "xom_ranges" in cfg:
        try:
            ranges = tuple((_num(lo, "xom_ranges"), _num(hi, "xom_ranges")) for lo, hi in cfg["xom_ranges"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"xom_ranges: {exc}") from None
    try:
        if preset:
            p = PRESETS[preset]
            base = _num(cfg.get("flash_base", p.flash_base), "flash_base")
            dev = DeviceModel(
                image, flash_base=base,
                flash_size=_num(cfg.get("flash_size", p.flash_size), "flash_size"),
                xom_ranges=ranges if ranges is not None else _shift(p.xom_ranges, p.flash_base, base),
                sram_base=_num(cfg.get("sram_base", 0x2000_0000), "sram_base"),
                sram_size=_num(cfg.get("sram_size", 0x2000), "sram_size"),
                policy=policy, preset=preset)
        else:
            dev = DeviceModel(
                image, flash_base=_num(cfg.get("flash_base", 0), "flash_base"),
                flash_size=_num(cfg["flash_size"], "flash_size") if "flash_size" in cfg else None,
                xom_ranges=ranges or (), sram_base=_num(cfg.get("sram_base", 0x2000_0000), "sram_base"),
                sram_size=_num(cfg.get("sram_size", 0x2000), "sram_size"),
                policy=policy, preset=cfg.get("name", "custom"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return dev


def _shift(ranges, old_base, new_base):
    return tuple((lo - old_base + new_base, hi - old_base + new_base) for lo, hi in ranges)


def load_config(path) -> DeviceModel:
    """Read a JSON config file and build the device."""
    path = Path(path)
    text = path.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return device_from_config(cfg, path.parent)


def device_config(dev: DeviceModel, image_path: str | None = None) -> dict:
    """Serialise a device's public configuration back to a config mapping."""
    p = dev.policy
    policy = {}
    for f in fields(DevicePolicy):
        v = getattr(p, f.name)
        policy[f.name] = v.value if isinstance(v, LoadPolicy) else v
    cfg = {
        "flash_base": hex(dev.flash_base),
        "flash_size": hex(dev.memory_map.flash_size),
        "xom_ranges": [[hex(lo), hex(hi)] for lo, hi in dev.xom_ranges],
        "sram_base": hex(dev.memory_map.sram_base),
        "sram_size": hex(dev.memory_map.sram_size),
        "policy": policy,
    }
    if dev.preset in PRESETS:
        cfg["preset"] = dev.preset
    if image_path:
        cfg["flash_image_path"] = image_path
    return cfg


__all__ = ["ConfigError", "device_config", "device_from_config", "load_config", "load_preset"]
