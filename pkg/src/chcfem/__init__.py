"""Finite element solver and convergence harness for the stochastic Cahn-Hilliard equation in 1D."""

from .errors import (ChcError, ConfigError, CouplingViolation, EigenSolveError,
                     NonZeroMeanError, SpecInvalidError, StepFailure,
                     UnsupportedDegreeError)
from .mesh_fem import FemOperators, FemSpace, FieldVec, Mesh1D, SymBanded, assemble, build

__version__ = "0.1.0"

__all__ = [
    "ChcError", "ConfigError", "CouplingViolation", "EigenSolveError", "NonZeroMeanError",
    "SpecInvalidError", "StepFailure", "UnsupportedDegreeError",
    "FemOperators", "FemSpace", "FieldVec", "Mesh1D", "SymBanded", "assemble", "build",
]
