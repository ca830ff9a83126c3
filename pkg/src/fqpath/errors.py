"""Exception types raised across the package."""


class FQPathError(Exception):
    """Base class for all package errors."""


class InvariantError(FQPathError, ValueError):
    """A value violates a documented invariant of its type."""


class ParseError(FQPathError, ValueError):
    """A serialized artifact is malformed.

    ``field`` names the offending key when one can be identified.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DesignError(FQPathError):
    """Filter or kernel construction failed (e.g. an ill-conditioned system)."""


class ConvergenceError(FQPathError):
    """An iterative fit did not converge. ``residual`` holds the final residual norm."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
