"""Exception types raised across the package."""

from __future__ import annotations

from typing import Any


class AcoiError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(AcoiError, ValueError):
    pass


class ParameterError(AcoiError, ValueError):
    pass


class ModelError(AcoiError, ValueError):
    """A model violates a structural invariant (kernel rows, weights, admissible sets)."""


class SpecError(AcoiError, ValueError):
    """A continuous model specification fails one of its defining inequalities."""


class ResolutionError(AcoiError, ValueError):
    pass


class NonConvergenceError(AcoiError, RuntimeError):
    """Value iteration hit its iteration cap.

    Carries the last iterate and its residual so callers can inspect or resume.
    """

    def __init__(self, message: str, *, alpha: float, last_iterate: Any = None,
                 residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.alpha = alpha
        self.last_iterate = last_iterate
        self.residual = residual
        self.iterations = iterations


class CertificationError(AcoiError, RuntimeError):
    pass


class CertificateInvalidError(AcoiError, ValueError):
    pass


class InsufficientSequenceError(AcoiError, RuntimeError):
    """Finite data cannot certify the requested property; this is not a disproof."""


class PolicyError(AcoiError, ValueError):
    def __init__(self, message: str, *, step: int = -1):
        super().__init__(message)
        self.step = step


class CensoringError(AcoiError, RuntimeError):
    def __init__(self, message: str, *, censored: int = 0, n_reps: int = 0):
        super().__init__(message)
        self.censored = censored
        self.n_reps = n_reps


class AssumptionViolation(AcoiError, ValueError):
    pass
