"""Exception types and located diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal


@dataclass(frozen=True, order=True)
class Diagnostic:
    severity: Literal["error", "warning"]
    line: int
    col: int
    message: str

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.severity}: {self.message}"

    def to_dict(self) -> dict:
        return {"severity": self.severity, "line": self.line, "col": self.col, "message": self.message}


class LisaError(Exception):
    """Base class for all errors raised by this package."""


class LisaSyntaxError(LisaError):
    """Source text could not be turned into a program; carries located diagnostics."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = sorted(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


class DeclarationError(LisaError):
    """A predicate or action is used without being declared by the program."""


class ModelError(LisaError):
    """Invalid Markov chain or elaboration failure (nondeterminism, range, probabilities)."""


class StateSpaceOverflow(ModelError):
    def __init__(self, cap: int, frontier: int):
        self.cap = cap
        self.frontier = frontier
        super().__init__(f"state space exceeds cap of {cap} states (frontier size {frontier})")


class ConvergenceError(LisaError):
    def __init__(self, sweeps: int, residual: float):
        self.sweeps = sweeps
        self.residual = residual
        super().__init__(f"no convergence after {sweeps} sweeps (residual {residual:.3e})")


class QueryError(LisaError):
    """Malformed or ill-typed reachability query."""


class PlanningError(LisaError):
    """Incomplete implication table or invalid policy."""
