"""Exception types shared across the package."""


class JointArdError(Exception):
    """Base class for all package errors."""


class InputError(JointArdError, ValueError):
    """Invalid shapes, values or configuration supplied by the caller."""


class NumericalError(JointArdError, ArithmeticError):
    """A factorization or solve failed even after jitter escalation.

    The partially completed optimization trace, when one exists, is
    attached as ``trace`` so callers can inspect what happened before
    the failure.
    """

    def __init__(self, message, matrix=None, condition=None, trace=None):
        super().__init__(message)
        self.matrix = matrix
        self.condition = condition
        self.trace = trace
