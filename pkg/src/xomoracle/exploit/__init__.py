"""Read-out attacks on flawed XOM implementations."""

from .extract import (
    ChannelUnavailable, Dump, ExtractionFault, GadgetDriver, RelockInterference, dump,
    extract_via_gadget, extract_via_itcm_alias, verify_dump,
)
from .gadgets import (
    ExploitError, Gadget, GadgetKind, GadgetRules, NoGadget, candidate_gadgets,
    find_load_gadget, rules_for,
)

__all__ = [
    "ChannelUnavailable", "Dump", "ExtractionFault", "GadgetDriver", "RelockInterference",
    "dump", "extract_via_gadget", "extract_via_itcm_alias", "verify_dump", "ExploitError",
    "Gadget", "GadgetKind", "GadgetRules", "NoGadget", "candidate_gadgets",
    "find_load_gadget", "rules_for",
]
