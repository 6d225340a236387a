"""Exception hierarchy shared across the package."""


class DroopPlanError(Exception):
    """Base class for all package errors."""


class InputError(DroopPlanError):
    """Invalid user-supplied data (files, parameters, options)."""


class RadialityError(InputError):
    """Network topology is not a tree rooted at the slack bus."""


class ConnectivityError(InputError):
    """Some bus is unreachable from the slack bus."""


class InternalError(DroopPlanError):
    """Inconsistency that indicates a bug, not bad input."""


class SolverError(DroopPlanError):
    """Numerical breakdown inside the conic solver."""


class InfeasibleError(DroopPlanError):
    """No feasible integer assignment exists.

    Carries the binary fixings of the node that completed the proof.
    """

    def __init__(self, message, fixed=None):
        super().__init__(message)
        self.fixed = dict(fixed) if fixed else {}


class NoConvergenceError(DroopPlanError):
    """Power-flow or droop fixed-point iteration failed to converge."""
