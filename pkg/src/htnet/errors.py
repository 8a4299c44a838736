"""Exception hierarchy.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3 and violated model preconditions with 4.
"""

from __future__ import annotations


class HtnetError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(HtnetError, ValueError):
    exit_code = 2


class RangeError(HtnetError, ValueError):
    """A requested time window does not fit in the available path."""

    exit_code = 2


class NumericalError(HtnetError, ArithmeticError):
    exit_code = 3


class SolverError(NumericalError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (best residual {residual:.3e})")
        self.residual = residual


class IntegrationError(NumericalError):
    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t={time!r}")
        self.time = time


class DegenerateStateError(NumericalError):
    """Allocation requested for the all-empty state."""


class PolicyError(NumericalError):
    """A policy returned an allocation outside the feasible set."""


class ResourceError(NumericalError):
    """A simulation exceeded its configured event budget."""


class PreconditionError(HtnetError):
    exit_code = 4


class HeavyTrafficError(PreconditionError):
    pass


class SingleBottleneckError(PreconditionError):
    pass


class PoolingMismatchError(PreconditionError):
    """LP dual uniqueness and the single-bottleneck test disagree."""
