"""Instruction recovery: generator, oracle and solver."""

from .predict import (
    DATA_CANDIDATE, INTERRUPT, IRREGULAR, SINGLE_STEP, STRATEGIES, EnumerationIndex,
    KnownMemory, Predictor, known_flash, observation_from_response,
)
from .solver import (
    CandidateSet, Context, Generator, NoCandidates, Oracle, OracleUnavailable,
    RecoveredInstruction, RecoveryError, Solver, Unrecoverable, classify,
    enumerate_candidates, generate_next_state, pre_check, recover_instruction, verify,
)
from .region import Listing, recover_region
from .states import GROUPS, InputStateSpec, SramRegion, id_word, initial_input_state

__all__ = [
    "CandidateSet", "Context", "DATA_CANDIDATE", "EnumerationIndex", "GROUPS", "Generator",
    "INTERRUPT", "IRREGULAR", "InputStateSpec", "KnownMemory", "Listing", "NoCandidates", "Oracle",
    "OracleUnavailable", "Predictor", "RecoveredInstruction", "RecoveryError", "SINGLE_STEP",
    "STRATEGIES", "Solver", "SramRegion", "Unrecoverable", "classify", "enumerate_candidates",
    "generate_next_state", "id_word", "initial_input_state", "known_flash",
    "observation_from_response", "pre_check", "recover_instruction", "recover_region", "verify",
]
