"""Simulated XOM-protected microcontrollers."""

from .config import ConfigError, device_config, device_from_config, load_config
from .model import (
    DEFAULT_GUARD, DeviceError, DeviceModel, DevicePolicy, GeometryMismatch, LoadPolicy,
    MemoryMap, OracleResponse, ReadBlocked, ResponseKind, UnknownPreset, Unmapped,
    is_load,
)
from .presets import FLAWLESS_PRESET, MSP432_DEFAULT_KEY, PRESETS, load_preset, preset_names
from .stacking import HandlerView, StackingFault, reconstruct, stack_exception

__all__ = [
    "ConfigError", "device_config", "device_from_config", "load_config",
    "DEFAULT_GUARD", "DeviceError", "DeviceModel", "DevicePolicy", "GeometryMismatch",
    "LoadPolicy", "MemoryMap", "OracleResponse", "ReadBlocked", "ResponseKind",
    "UnknownPreset", "Unmapped", "is_load", "FLAWLESS_PRESET", "MSP432_DEFAULT_KEY",
    "PRESETS", "load_preset", "preset_names", "HandlerView", "StackingFault",
    "reconstruct", "stack_exception",
]
