"""Exception types shared across the engine.

The CLI maps these to process exit codes: configuration problems exit 2,
numeric instability exits 3, missing reference data exits 4.
"""

from __future__ import annotations


class PfvmcError(Exception):
    """Base class for all engine errors."""


class DimensionError(PfvmcError, ValueError):
    """A matrix or tensor has an unusable shape (odd Pfaffian size, non-square input, ...)."""


class InvalidInputError(PfvmcError, ValueError):
    """Input contains NaN/Inf or violates a documented precondition."""


class SingularMatrixError(PfvmcError):
    """A matrix that must be invertible is numerically singular."""

    def __init__(self, message: str, condition_estimate: float = float("inf")):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class ConditioningError(PfvmcError):
    """A linear solve is too ill-conditioned to trust; the caller owns the retry policy."""


class ParameterDomainError(PfvmcError, ValueError):
    """A parameter is outside its domain (e.g. non-positive envelope decay)."""


class ConfigurationError(PfvmcError):
    """Bad or inconsistent configuration (unknown key, unsupported charge, dim mismatch)."""

    exit_code = 2


class MissingReferenceError(PfvmcError):
    """A required Hartree-Fock reference file is absent for a structure."""

    exit_code = 4


class NumericInstabilityError(PfvmcError):
    """Training or evaluation reached an unrecoverable numeric state."""

    exit_code = 3


class NodalSurfaceError(PfvmcError):
    """A walker sits exactly on the nodal surface where log|Psi| is undefined."""

    def __init__(self, message: str, walker_index: int = -1):
        super().__init__(message)
        self.walker_index = walker_index
