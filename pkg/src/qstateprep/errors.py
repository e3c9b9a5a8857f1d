"""Exception hierarchy.

Domain errors (bad boundary states, unreachable targets, control limits) map to
CLI exit code 2; everything else is an internal failure.
"""


class QStatePrepError(Exception):
    """Base class for all package errors."""


class DomainError(QStatePrepError, ValueError):
    """Input lies outside the domain where a quantity is defined."""


class NonPureTarget(DomainError):
    pass


class DivergentControl(DomainError):
    pass


class ControlCapExceeded(DomainError):
    pass


class SegmentGridMismatch(QStatePrepError, ValueError):
    pass


class ResidualExceeded(QStatePrepError, RuntimeError):
    pass


class GradientCheckFailed(QStatePrepError, RuntimeError):
    pass
