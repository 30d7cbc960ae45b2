"""Exception types shared across the toolkit."""


class OodkitError(Exception):
    """Base class for all toolkit errors."""


class FormatError(OodkitError):
    """A file's magic bytes, header, or layout does not match its format."""


class DataError(OodkitError):
    """Input values violate a data contract (non-finite, zero row, bad CSV cell)."""


class DegenerateDataError(DataError):
    """The data admits no meaningful fit (e.g. an all-duplicate training set)."""


class ParameterError(OodkitError):
    """A parameter is out of range or inconsistent with the inputs."""


class DomainError(OodkitError):
    """A value is outside the mathematical domain of an operation."""


class EmptySelectionError(OodkitError):
    """A class/source/split filter matched no samples."""


class LeakageError(OodkitError):
    """A sample appears on both sides of a fit/eval boundary."""


class NumericalError(OodkitError):
    """A numerical routine failed (e.g. covariance factorization)."""


class TrainingError(OodkitError):
    """Optimization diverged; carries the last epoch with a finite loss."""

    def __init__(self, message: str, last_finite_epoch: int | None = None):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch
