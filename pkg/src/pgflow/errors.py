"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class PGFlowError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(PGFlowError, ValueError):
    """Shapes, ranges or configuration values do not satisfy a precondition."""


class NumericError(PGFlowError, ArithmeticError):
    """A computation produced NaN or infinity."""


class UnsupportedProblem(PGFlowError):
    """The problem lacks a callback an operation needs."""


class NotFound(PGFlowError, KeyError):
    """Unknown built-in name."""


class CFLFailure(PGFlowError):
    """The explicit scheme would need more substeps than allowed."""

    def __init__(self, message: str, needed: int):
        super().__init__(message)
        self.needed = needed


class ConservationFailure(PGFlowError):
    """Fokker-Planck mass drifted beyond the configured tolerance."""


class ArgmaxFailure(PGFlowError):
    """No Newton start reached the stationarity tolerance."""

    def __init__(self, message: str, best_residual: float, where=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.where = where


class BoxViolation(PGFlowError):
    """A maximiser of G left the admissible control box."""


class StepFailure(PGFlowError):
    """Armijo backtracking exhausted without a decrease of the cost."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RegressionFailure(PGFlowError):
    """The least-squares policy update is not determined by the samples."""

    def __init__(self, message: str, unvisited: int):
        super().__init__(message)
        self.unvisited = unvisited
