"""NHANES diabetes schema: ADA labels and the seven published variable sets."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from ..dataset import Dataset
from ..errors import InvalidInputError, SchemaError
from .io import NHANES_COLUMNS, load_csv

logger = logging.getLogger(__name__)

FPG_THRESHOLD = 126.0  # mg/dL
HBA1C_THRESHOLD = 6.5  # percent

# Display name -> CSV column.
VARIABLES = {
    "Age": "age",
    "Gender": "gender",
    "Height": "height",
    "Weight": "weight_kg",
    "BMI": "bmi",
    "Waist": "waist",
    "Diastolic Blood Pressure": "dbp",
    "Systolic Blood Pressure": "sbp",
    "Pulse": "pulse",
    "Cholesterol": "cholesterol",
    "Triglycerides": "triglycerides",
    "Glucose": "glucose",
    "Glycosylated Hemoglobin": "hba1c",
}


@dataclass(frozen=True)
class ModelSpec:
    id: int
    variables: tuple
    cost: float

    @property
    def columns(self) -> tuple:
        return tuple(VARIABLES[v] for v in self.variables)


_BODY = ("Height", "Weight", "BMI", "Waist", "Diastolic Blood Pressure",
         "Systolic Blood Pressure", "Pulse")
_M4 = ("Age", *_BODY, "Cholesterol", "Triglycerides", "Gender")

MODEL_SPECS = {
    1: ModelSpec(1, ("Age", "Gender"), 0.0),
    2: ModelSpec(2, _BODY, 0.0),
    3: ModelSpec(3, ("Age", *_BODY, "Gender"), 0.0),
    4: ModelSpec(4, _M4, 0.5),
    5: ModelSpec(5, (*_M4, "Glycosylated Hemoglobin"), 4.5),
    6: ModelSpec(6, (*_M4, "Glucose"), 2.1),
    7: ModelSpec(7, (*_M4, "Glucose", "Glycosylated Hemoglobin"), 6.1),
}


def model_spec(model_id) -> ModelSpec:
    try:
        return MODEL_SPECS[int(model_id)]
    except (KeyError, ValueError):
        raise InvalidInputError(f"unknown model id {model_id!r}; expected 1-7") from None


def ada_label(fpg, hba1c, prior_dx) -> int:
    """1 if FPG >= 126 mg/dL, HbA1c >= 6.5 %, or a prior diagnosis; NaN/None means missing.

    A positive criterion decides the label even when the others are missing;
    a negative label needs every available criterion negative, and at least
    one criterion present.
    """
    vals = [None if v is None or (isinstance(v, float) and math.isnan(v)) else v
            for v in (fpg, hba1c, prior_dx)]
    fpg, hba1c, prior = vals
    if all(v is None for v in vals):
        raise InvalidInputError("no diagnostic information: FPG, HbA1c and prior diagnosis all missing")
    for v, name in ((fpg, "FPG"), (hba1c, "HbA1c")):
        if v is not None and v < 0:
            raise InvalidInputError(f"{name} must be nonnegative")
    if (fpg is not None and fpg >= FPG_THRESHOLD) or \
            (hba1c is not None and hba1c >= HBA1C_THRESHOLD) or bool(prior):
        return 1
    return 0


def ada_labels(fpg, hba1c, prior_dx) -> np.ndarray:
    """Vectorised :func:`ada_label`; rows with no information get -1."""
    fpg = np.asarray(fpg, dtype=np.float64)
    hba1c = np.asarray(hba1c, dtype=np.float64)
    prior = np.asarray(prior_dx, dtype=np.float64)
    pos = (fpg >= FPG_THRESHOLD) | (hba1c >= HBA1C_THRESHOLD) | (prior == 1)
    none = np.isnan(fpg) & np.isnan(hba1c) & np.isnan(prior)
    return np.where(none, -1, pos.astype(np.int64))


def load_nhanes(path) -> Dataset:
    """Read the extract, attach ADA labels, and drop rows that cannot be labelled.

    Only id and weight must be present per row; feature completeness is
    checked later against the variables a model needs.
    """
    feature_cols = [c for c in NHANES_COLUMNS if c not in ("id", "weight")]
    ds = load_csv(path, feature_cols, required=())
    y = ada_labels(ds.column("glucose"), ds.column("hba1c"), ds.column("prior_dx"))
    keep = np.flatnonzero(y >= 0)
    if keep.size < len(ds):
        logger.warning("%s: %d rows excluded, no diagnostic information", path, len(ds) - keep.size)
    ds = replace(ds.subset(keep), y=y[keep])
    age = ds.column("age")
    if np.isfinite(age).any():
        logger.info("%s: %d labelled rows, age range %.0f-%.0f", path, len(ds),
                    np.nanmin(age), np.nanmax(age))
    return ds


def require_columns(ds: Dataset, model_ids):
    """Raise SchemaError before any training if a model's column is absent."""
    for mid in model_ids:
        for col in model_spec(mid).columns:
            if col not in ds.columns:
                raise SchemaError(col, f"model {mid} needs column {col!r}, absent from data")


def complete_cases(ds: Dataset, columns) -> Dataset:
    cols = [ds.columns.index(c) for c in columns]
    ok = np.isfinite(ds.X[:, cols]).all(axis=1)
    if not ok.all():
        logger.info("dropped %d rows incomplete on %s", int((~ok).sum()), ", ".join(columns))
    return ds.subset(np.flatnonzero(ok))
