"""Exception types shared across the package."""


class SvyConfError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SvyConfError, ValueError):
    """An argument violates a documented precondition."""


class InvalidStateError(SvyConfError, RuntimeError):
    """An object is used before it is ready (e.g. an uncalibrated model)."""


class TrainingDivergedError(SvyConfError, ArithmeticError):
    """The training loss became non-finite."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class UndefinedMetricError(SvyConfError, ValueError):
    """A metric is undefined for the given inputs (e.g. a single class)."""


class DataError(SvyConfError, ValueError):
    """Input data is unusable (e.g. no complete rows)."""


class SchemaError(DataError):
    """Input data is missing a required column."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"missing required column {column!r}")

    def __str__(self):
        return self.args[0]
