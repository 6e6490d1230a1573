"""Exception hierarchy.

Validation problems (bad inputs, bad config, malformed files) derive from
:class:`ValidationError` and map to CLI exit status 1. Everything raised while
a computation is running derives from :class:`ComputationError` (exit 2).
"""


class SparsefitError(Exception):
    """Base class for all package errors."""


class ValidationError(SparsefitError, ValueError):
    """Invalid input value, file or configuration."""


class InvalidScheduleError(ValidationError):
    """Observation schedule does not fit the simulation grid."""


class StructuralError(ValidationError):
    """Shapes or schedules of two objects do not line up."""


class ConfigurationError(ValidationError):
    """A configuration cannot be used (e.g. an empty prior region)."""


class DivisionError(ValidationError, ZeroDivisionError):
    """A ratio was requested with a zero divisor."""


class ComputationError(SparsefitError, RuntimeError):
    """Failure during a numerical computation."""


class FilterDivergenceError(ComputationError):
    """The linearized filter produced a non-finite or indefinite covariance."""

    def __init__(self, step, message=None):
        self.step = int(step)
        super().__init__(message or f"filter diverged at step {self.step}")


class BudgetExceededError(ComputationError):
    """A sampler ran out of its candidate budget.

    The partially built result, if any, is attached as ``partial``.
    """

    def __init__(self, message, partial=None, diagnostics=None):
        super().__init__(message)
        self.partial = partial
        self.diagnostics = dict(diagnostics or {})


class StageError(ComputationError):
    """Wraps a failure of one pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
