"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes: usage problems exit 1, data
problems exit 2 and numeric failures exit 3.
"""


class EsnError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class UsageError(EsnError, ValueError):
    """Bad arguments: dimension mismatch, missing inputs, invalid config."""

    exit_code = 1


class DataError(EsnError):
    """Unreadable or malformed input data."""

    exit_code = 2


class NumericError(EsnError, ArithmeticError):
    """A computation produced an unusable numeric result."""

    exit_code = 3


class NumericOverflowError(NumericError):
    """A reservoir state became non-finite.

    Attributes:
        step: index into the input sequence where the state blew up.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DegenerateTargetError(NumericError):
    """Target (or residual) variance is zero, so a normalized score is undefined."""


class ProjectionSingularError(NumericError):
    """The convergence correction cannot move a violating singular value."""
