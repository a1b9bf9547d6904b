"""CSV ingestion and deterministic report writing."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from ..dataset import Dataset
from ..errors import DataError, SchemaError

logger = logging.getLogger(__name__)

MISSING = {"", "na", "nan", "null", "none", "."}

# Header names of the NHANES extract, case-sensitive.
NHANES_COLUMNS = (
    "id", "weight", "age", "height", "weight_kg", "bmi", "waist", "dbp", "sbp", "pulse",
    "cholesterol", "triglycerides", "gender", "race", "glucose", "hba1c", "prior_dx",
)

# NHANES race/ethnicity codes; one-hot columns are race_1 .. race_6.
RACE_CODES = {
    1: "Mexican American",
    2: "Other Hispanic",
    3: "Non-Hispanic white",
    4: "Non-Hispanic black",
    5: "Non-Hispanic Asian",
    6: "Other race (incl. multi-racial)",
}

_TRUE = {"1", "yes", "y", "true", "t"}
_FALSE = {"0", "no", "n", "false", "f", "2"}
_MALE = {"1", "male", "m"}
_FEMALE = {"0", "2", "female", "f"}


def parse_gender(text):
    """male -> 1, female -> 0; accepts words, initials and NHANES codes 1/2."""
    t = text.strip().lower()
    if t in MISSING:
        return math.nan
    if t in _MALE:
        return 1.0
    if t in _FEMALE:
        return 0.0
    raise ValueError(f"unrecognised gender {text!r}")


def parse_bool(text):
    t = text.strip().lower()
    if t in MISSING:
        return math.nan
    if t in _TRUE:
        return 1.0
    if t in _FALSE:
        return 0.0
    raise ValueError(f"unrecognised boolean {text!r}")


def parse_number(text):
    t = text.strip()
    if t.lower() in MISSING:
        return math.nan
    return float(t)


PARSERS = {"gender": parse_gender, "prior_dx": parse_bool}


def load_csv(path, columns, weight_col="weight", id_col="id", label_col=None,
             required=None, parsers=None) -> Dataset:
    """Read ``columns`` (plus weight, id and optional label) from a headered CSV.

    Rows with a missing value in any ``required`` column (default: all of
    ``columns``, the weight and the label) are dropped; rows with an
    unparseable cell are dropped with a warning naming the line. Counts land in
    ``Dataset.meta["dropped_missing"]`` and ``meta["dropped_bad"]``.
    """
    path = Path(path)
    parsers = {**PARSERS, **(parsers or {})}
    columns = tuple(columns)
    required = set(columns if required is None else required) | {weight_col}
    if label_col:
        required.add(label_col)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(weight_col, f"{path} is empty") from None
        header = [h.strip() for h in header]
        needed = [id_col, weight_col, *columns] + ([label_col] if label_col else [])
        for name in needed:
            if name not in header:
                raise SchemaError(name, f"{path}: missing required column {name!r}")
        pos = {name: header.index(name) for name in needed}

        ids, weights, feats, labels = [], [], [], []
        n_missing = n_bad = 0
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                if len(row) < len(header):
                    raise ValueError(f"expected {len(header)} fields, got {len(row)}")
                values = {}
                for name in needed[1:]:
                    values[name] = parsers.get(name, parse_number)(row[pos[name]])
            except ValueError as exc:
                n_bad += 1
                logger.warning("%s line %d: dropped row (%s)", path, line_no, exc)
                continue
            if any(math.isnan(values[c]) for c in required if c in values):
                n_missing += 1
                continue
            if not values[weight_col] > 0:
                n_bad += 1
                logger.warning("%s line %d: dropped row (nonpositive weight)", path, line_no)
                continue
            ids.append(row[pos[id_col]].strip())
            weights.append(values[weight_col])
            feats.append([values[c] for c in columns])
            if label_col:
                labels.append(values[label_col])
    if n_missing:
        logger.info("%s: dropped %d rows with missing values", path, n_missing)
    if not ids:
        raise DataError(f"{path}: no usable rows")
    X = np.array(feats, dtype=np.float64).reshape(len(ids), len(columns))
    y = None
    if label_col:
        y = np.array(labels)
        if np.all(y == np.round(y)):
            y = y.astype(np.int64)
    return Dataset(X=X, columns=columns, weights=np.array(weights), ids=np.array(ids), y=y,
                   meta={"source": str(path), "dropped_missing": n_missing, "dropped_bad": n_bad})


def one_hot_race(codes):
    """``(n, 6)`` indicator matrix for race codes 1-6 (NaN rows stay all-zero)."""
    codes = np.asarray(codes, dtype=np.float64)
    out = np.zeros((codes.size, len(RACE_CODES)))
    for j, code in enumerate(RACE_CODES):
        out[:, j] = codes == code
    return out


# ---------------------------------------------------------------------------
# output


def _plain(obj):
    if is_dataclass(obj):
        return _plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj


def canonical_json(obj, indent=None) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=indent, allow_nan=False)


def config_hash(cfg) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:12]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    if isinstance(v, (list, tuple)):
        return " ".join(_cell(x) for x in v)
    return str(v)


def write_csv(path, rows, fieldnames):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_cell(row.get(k)) for k in fieldnames])
    return path


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj, indent=2) + "\n")
    return path
