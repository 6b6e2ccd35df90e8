"""Linear-sweep recovery of whole XOM regions and listing output."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..isa.equivalence import Classification
from ..isa.instruction import format_instruction
from .predict import SINGLE_STEP
from .solver import NoCandidates, RecoveredInstruction, Solver, Unrecoverable


@dataclass
class Listing:
    start: int
    end: int
    strategy: str
    entries: list[RecoveredInstruction] = field(default_factory=list)
    device: str = ""

    @property
    def total_queries(self) -> int:
        return sum(e.queries for e in self.entries)

    @property
    def mean_queries(self) -> float:
        return self.total_queries / len(self.entries) if self.entries else 0.0

    @property
    def failures(self) -> list[RecoveredInstruction]:
        return [e for e in self.entries if e.error]

    def class_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            name = e.classification.value if e.classification else "Unrecoverable"
            out[name] = out.get(name, 0) + 1
        return out

    def at(self, addr: int) -> RecoveredInstruction | None:
        for e in self.entries:
            if e.address == addr:
                return e
        return None

    def semantic_key(self) -> tuple:
        """Address-relative content, for comparing listings across devices.

        Classifications are left out: they describe how much a strategy could
        observe, and the interrupt strategy never sees handler mode or PRIMASK.
        """
        return tuple((e.address - self.start, e.instruction, e.literal, e.error)
                     for e in self.entries)

    def class_differences(self, other: "Listing") -> list[tuple[int, str, str]]:
        """``(offset, ours, theirs)`` wherever the two classifications differ."""
        theirs = {e.address - other.start: e.classification for e in other.entries}
        out = []
        for e in self.entries:
            off = e.address - self.start
            if off in theirs and theirs[off] is not e.classification:
                out.append((off, _cls(e.classification), _cls(theirs[off])))
        return out

    def text(self) -> str:
        lines = [f"; {self.device} {self.start:#010x}-{self.end:#010x} strategy={self.strategy}"]
        for e in self.entries:
            enc = e.encoding or "-"
            cls = e.classification.value if e.classification else "Unrecoverable"
            note = ""
            if e.alternates and e.classification not in (Classification.IMMEDIATE_UNRECOVERABLE,
                                                          Classification.DATA):
                shown = ", ".join(format_instruction(a, e.address) for a in e.alternates[:4])
                more = len(e.alternates) - 4
                note = f" | {shown}" + (f" (+{more} more)" if more > 0 else "")
            lines.append(f"{e.address:08x}:  {enc:<10} {e.text:<30} ; {cls}{note}")
        counts = ", ".join(f"{k}={v}" for k, v in sorted(self.class_counts().items()))
        lines.append(f"; {len(self.entries)} entries, {self.total_queries} queries, "
                     f"{self.mean_queries:.2f} per instruction; {counts}")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {
            "device": self.device,
            "start": f"0x{self.start:08x}",
            "end": f"0x{self.end:08x}",
            "strategy": self.strategy,
            "entries": [e.to_json() for e in self.entries],
            "metrics": {
                "entries": len(self.entries),
                "total_queries": self.total_queries,
                "mean_queries_per_instruction": round(self.mean_queries, 4),
                "classes": self.class_counts(),
                "failures": len(self.failures),
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    def to_source(self) -> str:
        """Assembly that re-assembles to the canonical code at ``start``.

        Entries without an instruction (data, failures) become ``udf``
        placeholders so later addresses keep their offsets.
        """
        lines = [".thumb"]
        for e in self.entries:
            if e.instruction is None or e.classification is Classification.DATA or e.error:
                lines.append("    udf #0")
            else:
                lines.append(f"    {format_instruction(e.instruction, e.address)}")
        return "\n".join(lines) + "\n"


def recover_region(dev, start: int, end: int, strategy: str = SINGLE_STEP, *,
                   solver: Solver | None = None, progress=None) -> Listing:
    """Sweep ``[start, end)`` one instruction at a time.

    Failures are recorded inline and the sweep continues with the next
    halfword.
    """
    if start & 1 or end & 1 or end <= start:
        raise ValueError("region bounds must be halfword aligned with start < end")
    solver = solver or Solver(dev, strategy)
    listing = Listing(start, end, strategy, device=getattr(dev, "preset", ""))
    addr = start
    while addr < end:
        q0 = solver.oracle.queries
        try:
            entry = solver.recover(addr)
        except (Unrecoverable, NoCandidates) as exc:
            residual = getattr(exc, "residual", ())
            entry = RecoveredInstruction(
                addr, None, None, width=2, queries=solver.oracle.queries - q0,
                error=type(exc).__name__, residual=residual)
        listing.entries.append(entry)
        if progress is not None:
            progress(entry)
        addr += entry.width
    return listing


def _cls(c) -> str:
    return c.value if c is not None else "Unrecoverable"
