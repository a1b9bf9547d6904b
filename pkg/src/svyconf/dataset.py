"""The row container every module passes around."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix plus label, survey weight, record id and optional cluster labels.

    ``y`` holds integer class labels (``0..K-1``) or real targets, or is None
    for unlabeled data. ``state`` and ``city`` are only present for simulated
    populations that feed the two-stage sampler.
    """

    X: np.ndarray
    columns: tuple
    weights: np.ndarray
    ids: np.ndarray
    y: np.ndarray | None = None
    state: np.ndarray | None = None
    city: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise InvalidInputError("X must be 2-D")
        n = X.shape[0]
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "columns", tuple(self.columns))
        if len(self.columns) != X.shape[1]:
            raise InvalidInputError("one column name per feature is required")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (n,) or not (w > 0).all():
            raise InvalidInputError("weights must be positive, one per row")
        object.__setattr__(self, "weights", w)
        ids = np.asarray(self.ids)
        if ids.shape != (n,):
            raise InvalidInputError("one id per row is required")
        object.__setattr__(self, "ids", ids)
        for name in ("y", "state", "city"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v)
                if v.shape != (n,):
                    raise InvalidInputError(f"{name} must have one entry per row")
                object.__setattr__(self, name, v)

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)

        def pick(a):
            return None if a is None else a[idx]

        return replace(self, X=self.X[idx], weights=self.weights[idx], ids=self.ids[idx],
                       y=pick(self.y), state=pick(self.state), city=pick(self.city))

    def select(self, columns) -> "Dataset":
        """Keep only the named feature columns, in the given order."""
        pos = [self.columns.index(c) for c in columns]
        return replace(self, X=self.X[:, pos], columns=tuple(columns))

    def with_weights(self, weights) -> "Dataset":
        return replace(self, weights=weights)

    def column(self, name) -> np.ndarray:
        return self.X[:, self.columns.index(name)]
