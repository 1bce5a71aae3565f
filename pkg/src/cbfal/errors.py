"""Exception types shared across the package."""


class CbfalError(Exception):
    """Base class for all package errors."""


class QueryOutsideSpan(CbfalError):
    """A history lookup fell before the earliest retained sample."""


class MissingDerivativeHistory(QueryOutsideSpan):
    """A delayed derivative value was requested outside the recorded span."""


class NonMonotoneTime(CbfalError):
    """A sample was appended at a time not after the last stored sample."""


class GradientMismatch(CbfalError):
    """A user-supplied gradient disagrees with finite differences."""


class NotExtendable(CbfalError):
    """The functional does not admit an extended (relative degree 2) construction."""


class DegenerateConstraint(CbfalError):
    """The safety constraint lost its input dependence while being violated."""

    def __init__(self, message, t=None, phi=None, phi0=None):
        super().__init__(message)
        self.t = t
        self.phi = phi
        self.phi0 = phi0


class NonFiniteState(CbfalError):
    """The integrated state became non-finite (finite escape)."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class UnknownScenario(CbfalError, KeyError):
    pass


class InvalidOverride(CbfalError, ValueError):
    pass
