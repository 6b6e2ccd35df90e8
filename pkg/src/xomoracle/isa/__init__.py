"""ARMv6-M instruction model."""

from .assembler import AssemblyError, Program, assemble, disassemble, parse_instruction, to_source
from .equivalence import (
    AmbiguityClass, Classification, canonicalize, equivalence_class, functional_key,
    is_data, observation_group,
)
from .instruction import (
    Encoding, Instruction, NotEncodable, UndefinedEncoding, all_16bit, decode,
    decode16, decode32, encode, format_instruction, is_wide_prefix,
)
from .machine import (
    KERNEL, ExecOutcome, FaultRecord, FlatMemory, MemoryPolicy, NoMemory,
    OutcomeKind, SystemState, execute, flags_value,
)

__all__ = [
    "AssemblyError", "Program", "assemble", "disassemble", "parse_instruction",
    "to_source", "AmbiguityClass", "Classification", "canonicalize",
    "equivalence_class", "functional_key", "is_data", "observation_group",
    "Encoding", "Instruction", "NotEncodable", "UndefinedEncoding", "all_16bit",
    "decode", "decode16", "decode32", "encode", "format_instruction",
    "is_wide_prefix", "KERNEL", "ExecOutcome", "FaultRecord", "FlatMemory",
    "MemoryPolicy", "NoMemory", "OutcomeKind", "SystemState", "execute",
    "flags_value",
]
