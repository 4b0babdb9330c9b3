"""Exception hierarchy shared by the solver modules."""


class SwiptError(Exception):
    """Base class for all package errors."""


class StructuralError(SwiptError, ValueError):
    """Inputs have inconsistent dimensions or violate a documented precondition."""


class InstanceInfeasible(SwiptError):
    """No resource allocation policy satisfies the constraints of the instance."""


class RecoveryFailed(SwiptError):
    """Rank-one recovery produced a policy that failed post-verification."""


class NumericalFailure(SwiptError):
    """The conic backend did not reach a usable solution."""


class RoundingViolatesBackhaul(SwiptError):
    """Rounded selection pattern breaks a backhaul capacity limit and cannot be repaired."""


class RoundedPatternInfeasible(SwiptError):
    """The binary pattern obtained by rounding a relaxed selection admits no feasible policy."""
