"""Exception types shared across the package.

The CLI maps these onto exit codes: validation failures exit 1,
tolerance failures exit 2, I/O problems exit 3.
"""


class GtcError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(GtcError):
    """A precondition, file format, or argument check failed."""


class ToleranceError(GtcError):
    """A verification or study ran fine but exceeded its tolerances."""


class ConvergenceError(GtcError):
    """An iteration hit its cap before reaching the requested tolerance.

    Carries the last iterate so callers can inspect how far it got.
    """

    def __init__(self, message, last_estimate=None):
        super().__init__(message)
        self.last_estimate = last_estimate
