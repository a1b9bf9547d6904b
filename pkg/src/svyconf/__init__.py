"""Survey-weighted neural networks with conformal prediction sets."""

from .dataset import Dataset
from .errors import (
    DataError,
    InvalidInputError,
    InvalidStateError,
    SchemaError,
    SvyConfError,
    TrainingDivergedError,
    UndefinedMetricError,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DataError", "InvalidInputError", "InvalidStateError", "SchemaError",
    "SvyConfError", "TrainingDivergedError", "UndefinedMetricError",
]
