"""Exception hierarchy.

The CLI maps these onto exit codes: validation problems exit with 2,
numerical failures with 3.
"""


class LcirtError(Exception):
    """Base class for all package errors."""


class DataValidationError(LcirtError, ValueError):
    """Input data or partition violates the file format or its invariants."""


class NumericalError(LcirtError, ArithmeticError):
    """An estimator produced non-finite values or failed every start."""


class StartAborted(NumericalError):
    """A single EM start was abandoned (empty class, non-finite step)."""


class PipelineError(LcirtError):
    """A pipeline stage failed; ``completed`` lists the stages already written."""

    def __init__(self, message, completed=(), cause=None):
        super().__init__(message)
        self.completed = tuple(completed)
        self.cause = cause
