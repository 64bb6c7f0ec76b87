"""Exception types raised across the package."""

from __future__ import annotations


class ChcError(Exception):
    """Base class for all package errors."""


class UnsupportedDegreeError(ChcError, ValueError):
    pass


class NonZeroMeanError(ChcError, ValueError):
    """An operation defined on the mean-zero subspace received a field with a mean."""


class EigenSolveError(ChcError, RuntimeError):
    pass


class SpecInvalidError(ChcError, ValueError):
    """Noise covariance violates the Hilbert-Schmidt condition or the gamma range."""


class StepFailure(ChcError, RuntimeError):
    """Newton iteration did not converge within the allowed iterations.

    Attributes
    ----------
    step_index : int
        1-based index of the failing time step (0 if unknown).
    residuals : list of float
        Residual norm after every Newton iterate of the failing step.
    """

    def __init__(self, message: str, step_index: int = 0, residuals=None):
        super().__init__(message)
        self.step_index = step_index
        self.residuals = list(residuals or [])


class CouplingViolation(ChcError, RuntimeError):
    """Resolutions of one study sample were not driven by the same noise path."""


class ConfigError(ChcError, ValueError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key
