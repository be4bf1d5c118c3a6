"""Error categories raised by the services.

The CLI maps them to exit codes: invalid arguments to 2, every other
`KoopmanError` to 3.
"""

from typing import Optional


class KoopmanError(Exception):
    """Base class of every error raised by koopman_rds."""


class InvalidArgumentError(KoopmanError, ValueError):
    pass


class UnsupportedError(KoopmanError):
    """Operation not defined for the given model kind or data layout."""


class DegenerateDataError(KoopmanError):
    def __init__(self, message: str, *, numerical_rank: Optional[int] = None) -> None:
        super().__init__(message)
        self.numerical_rank = numerical_rank


class NumericalError(KoopmanError):
    pass


class GridResolutionError(NumericalError):
    """Leading generator eigenvalues moved by more than the allowed fraction under refinement."""


class IntegrationDivergedError(KoopmanError):
    def __init__(
        self,
        *,
        step: int,
        path: int = 0,
        context: Optional[str] = None,
    ) -> None:
        self.step = step
        self.path = path
        self.context = context
        msg = f"Integration diverged at step {step} on path {path}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)

    def with_context(self, context: str) -> "IntegrationDivergedError":
        joined = f"{context}, {self.context}" if self.context else context
        return IntegrationDivergedError(step=self.step, path=self.path, context=joined)


class ExperimentError(KoopmanError):
    """Wraps an error raised while running a named experiment."""

    def __init__(self, experiment: str, cause: Exception) -> None:
        super().__init__(f"Experiment '{experiment}' failed: {cause}")
        self.experiment = experiment
        self.cause = cause


def is_usage_error(exc: BaseException) -> bool:
    """True when `exc` (or the cause it wraps) is an invalid-argument error."""
    if isinstance(exc, ExperimentError):
        return is_usage_error(exc.cause)
    return isinstance(exc, InvalidArgumentError)
