"""Exception hierarchy shared by every stage of the pipeline.

Each exception carries the CLI exit status it maps to, so the command line
layer never has to know which module raised.
"""
from __future__ import annotations

from dataclasses import dataclass

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_ANALYSIS = 4


class QKDError(Exception):
    exit_code = EXIT_ANALYSIS


@dataclass(frozen=True)
class ViolatedInvariant:
    field: str
    description: str

    def __str__(self) -> str:
        return f"{self.field}: {self.description}"


class ValidationError(QKDError, ValueError):
    """One or more invariants failed; ``violations`` lists all of them."""

    exit_code = EXIT_VALIDATION

    def __init__(self, violations: list[ViolatedInvariant], what: str = "parameters"):
        self.violations = list(violations)
        detail = "; ".join(str(v) for v in self.violations)
        super().__init__(f"invalid {what}: {detail}")


class FormatError(QKDError, ValueError):
    """Malformed input file. ``line`` is 1-based, or None if not line-specific."""

    exit_code = EXIT_VALIDATION

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip() if where else message)


class AnalysisError(QKDError):
    """Base for failures of the key-rate analysis. ``operation`` names the step."""

    operation = "analysis"


class EmptyTestSet(AnalysisError):
    operation = "qber_upper_bound"


class ZeroVacuumCounts(AnalysisError):
    operation = "vacuum_bounds"


class Infeasible(AnalysisError):
    operation = "solve_single_photon"


class NegativeSc(AnalysisError):
    operation = "solve_single_photon"


class ZeroDelta(AnalysisError):
    operation = "single_photon_qber"


class QberAboveHalf(AnalysisError):
    """A sampled QBER exceeds 1/2, which a tally may not carry."""

    operation = "tally"


class NoSolution(QKDError):
    """Channel calibration cannot reproduce the observed rates."""


class AmbiguousSlot(QKDError):
    """A timestamp falls too close to the midpoint between two slots."""

    def __init__(self, message: str, positions=None):
        super().__init__(message)
        self.positions = positions


class UnknownSlot(QKDError, KeyError):
    """A detection references a slot index with no matching pulse plan."""

    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else "unknown slot"
