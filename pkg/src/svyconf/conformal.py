"""Split conformal prediction for survey samples.

Regression: absolute-residual intervals, either classical (exchangeable
calibration) or covariate-shift weighted, where each calibration score gets
mass proportional to a likelihood-ratio weight and the test point's weight
goes to an atom at +inf.

Classification: split survey conformalized quantile classification (CQC).
A score network gives per-record scores ``s_i = w_i log f_{y_i}(x_i)``, a
quantile network is fit to those scores with the pinball loss, and a
survey-weighted quantile of ``q(x_i) - s_i`` on a third split sets the
threshold for the label sets ``{k : s(x, k) >= q(x) - Q}``.

``alpha`` is always the miscoverage rate here: sets target coverage 1 - alpha.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import numnet
from .errors import InvalidInputError, InvalidStateError
from .numnet import NetworkParams, TrainConfig
from .survey import MASS_RTOL, WeightedEmpirical, _first_reaching, weighted_quantile

FORMAT = "svyconf.cqc"
FORMAT_VERSION = 1
SCORE_WEIGHTINGS = ("literal", "plain")


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")


# ---------------------------------------------------------------------------
# prediction sets


@dataclass(frozen=True)
class IntervalSet:
    lo: float
    hi: float
    alpha: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise InvalidInputError("interval needs lo <= hi")

    def __contains__(self, y):
        return self.lo <= y <= self.hi

    @property
    def size(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class LabelSet:
    labels: frozenset
    alpha: float

    def __contains__(self, y):
        return int(y) in self.labels

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class CoverageResult:
    empirical_coverage: float
    mean_set_size: float
    n_eval: int
    alpha: float | None = None
    weighted: bool = False


# ---------------------------------------------------------------------------
# regression


def _regressor(model):
    if isinstance(model, NetworkParams):
        return lambda X: numnet.forward(model, X)[..., 0]
    if callable(model):
        return model
    raise InvalidInputError("model must be NetworkParams or a callable")


def residual_score(model, x, y):
    """Absolute residual ``|y - m(x)|``; vectorised over rows."""
    pred = np.asarray(_regressor(model)(np.asarray(x, dtype=np.float64)), dtype=np.float64)
    out = np.abs(np.asarray(y, dtype=np.float64) - pred)
    return float(out) if out.ndim == 0 else out


def _calibration(calibration):
    X = getattr(calibration, "X", None)
    if X is None and hasattr(calibration, "rows"):
        calibration = calibration.rows
    if len(calibration) == 0:
        raise InvalidInputError("calibration set is empty")
    return calibration


def _intervals(center, q, alpha, single):
    sets = [IntervalSet(c - r, c + r, alpha) for c, r in zip(np.atleast_1d(center), np.atleast_1d(q))]
    return sets[0] if single else sets


def split_conformal_interval(model, calibration, x_new, alpha):
    """Classical split conformal interval ``m(x) +/- q``.

    ``q`` is the ceil((n+1)(1-alpha))-th smallest calibration residual, or
    +inf when that rank exceeds n. Accepts one point or a batch of rows.
    """
    _check_alpha(alpha)
    cal = _calibration(calibration)
    scores = np.sort(residual_score(model, cal.X, cal.y))
    n = scores.size
    k = math.ceil((1 - alpha) * (n + 1) * (1 - MASS_RTOL))
    q = math.inf if k > n else float(scores[k - 1])
    x_new = np.asarray(x_new, dtype=np.float64)
    center = _regressor(model)(x_new)
    return _intervals(center, np.full(np.shape(center), q), alpha, x_new.ndim == 1)


def weighted_conformal_interval(model, calibration, x_new, w_fn=None, alpha=0.1, test_weight=None):
    """Covariate-shift weighted split conformal interval.

    Calibration score ``i`` gets mass ``w(X_i) / (sum_j w(X_j) + w(x))`` and
    +inf gets ``w(x) / (...)``; the half-width is the (1 - alpha) quantile of
    that distribution. ``w_fn`` maps rows to likelihood ratios. Without it the
    calibration survey weights are used, with ``test_weight`` (default: their
    mean) for the new point.
    """
    _check_alpha(alpha)
    cal = _calibration(calibration)
    x_new = np.asarray(x_new, dtype=np.float64)
    single = x_new.ndim == 1
    X_new = x_new[None, :] if single else x_new
    if w_fn is not None:
        w_cal = np.asarray(w_fn(cal.X), dtype=np.float64)
        w_new = np.asarray(w_fn(X_new), dtype=np.float64)
    else:
        w_cal = cal.weights
        tw = float(np.mean(w_cal)) if test_weight is None else float(test_weight)
        w_new = np.full(X_new.shape[0], tw)
    if not ((w_cal > 0).all() and (w_new > 0).all()):
        raise InvalidInputError("likelihood-ratio weights must be positive")

    scores = residual_score(model, cal.X, cal.y)
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    cum = np.cumsum(w_cal[order])
    total = cum[-1] + w_new
    q = np.empty(X_new.shape[0])
    for i, t in enumerate(total):
        j = _first_reaching(cum, (1 - alpha) * t)
        q[i] = math.inf if j >= sorted_scores.size else sorted_scores[j]
    center = _regressor(model)(X_new)
    return _intervals(center, q, alpha, single)


# ---------------------------------------------------------------------------
# classification (CQC)


@dataclass(frozen=True, eq=False)
class CqcModel:
    score_net: NetworkParams
    quantile_net: NetworkParams
    alpha: float
    threshold: float | None = None
    score_weighting: str = "literal"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_alpha(self.alpha)
        if self.score_weighting not in SCORE_WEIGHTINGS:
            raise InvalidInputError(f"score_weighting must be one of {SCORE_WEIGHTINGS}")
        if self.threshold is not None and math.isnan(self.threshold):
            raise InvalidInputError("threshold must not be NaN")

    @property
    def n_classes(self) -> int:
        return self.score_net.output_dim

    @property
    def calibrated(self) -> bool:
        return self.threshold is not None

    def to_dict(self) -> dict:
        thr = self.threshold
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "alpha": self.alpha,
            "threshold": None if thr is None else ("inf" if math.isinf(thr) else thr),
            "score_weighting": self.score_weighting,
            "n_classes": self.n_classes,
            "score_net": self.score_net.to_dict(),
            "quantile_net": self.quantile_net.to_dict(),
            "meta": self.meta,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d) -> "CqcModel":
        if d.get("format") != FORMAT:
            raise InvalidInputError("not a CQC model artifact")
        if d.get("version") != FORMAT_VERSION:
            raise InvalidInputError(f"unsupported CQC artifact version {d.get('version')}")
        thr = d["threshold"]
        thr = math.inf if thr == "inf" else (None if thr is None else float(thr))
        return cls(
            score_net=NetworkParams.from_dict(d["score_net"]),
            quantile_net=NetworkParams.from_dict(d["quantile_net"]),
            alpha=float(d["alpha"]),
            threshold=thr,
            score_weighting=d.get("score_weighting", "literal"),
            meta=d.get("meta", {}),
        )

    @classmethod
    def from_json(cls, text) -> "CqcModel":
        return cls.from_dict(json.loads(text))


def record_scores(score_net, X, y, w, score_weighting="literal") -> np.ndarray:
    """``s_i = w_i log f_{y_i}(x_i)``; ``"plain"`` drops the weight factor."""
    logp = numnet.log_softmax(numnet.forward(score_net, X))
    y = np.asarray(y).astype(np.int64)
    s = logp[np.arange(len(y)), y]
    if score_weighting == "literal":
        s = np.asarray(w, dtype=np.float64) * s
    return s


def candidate_scores(model: CqcModel, X) -> np.ndarray:
    """``s(x, k)`` for every class; new points carry weight 1, so this is ``log f_k(x)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return numnet.log_softmax(numnet.forward(model.score_net, X))


def quantile_prediction(model: CqcModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return numnet.forward(model.quantile_net, X)[:, 0]


def _disjoint_nonempty(*index_sets):
    sets = [np.asarray(i, dtype=np.int64) for i in index_sets]
    if any(s.size == 0 for s in sets):
        raise InvalidInputError("every split must be nonempty")
    seen = np.concatenate(sets)
    if np.unique(seen).size != seen.size:
        raise InvalidInputError("splits must be disjoint")
    return sets


def cqc_fit(sample, splits, alpha, score_cfg: TrainConfig, quantile_cfg: TrainConfig | None = None,
            score_weighting="literal", score_net=None) -> CqcModel:
    """Steps 1-2: score network on ``I1``, pinball-loss quantile network on ``I2``.

    ``sample`` is a Dataset or WeightedSample with integer labels. Passing a
    trained ``score_net`` skips the first fit. Returns an uncalibrated model.
    """
    _check_alpha(alpha)
    rows = _calibration(sample)
    i1, i2 = _disjoint_nonempty(*splits)
    if score_weighting not in SCORE_WEIGHTINGS:
        raise InvalidInputError(f"score_weighting must be one of {SCORE_WEIGHTINGS}")
    if score_net is None:
        score_net = numnet.train(rows.X[i1], rows.y[i1], rows.weights[i1],
                                 score_cfg.replace(loss_kind="cross_entropy"))
    s2 = record_scores(score_net, rows.X[i2], rows.y[i2], rows.weights[i2], score_weighting)
    qcfg = (quantile_cfg or score_cfg).replace(loss_kind="pinball", quantile_alpha=alpha)
    quantile_net = numnet.train(rows.X[i2], s2, rows.weights[i2], qcfg)
    return CqcModel(score_net, quantile_net, alpha, None, score_weighting)


def calibration_level(alpha, n3) -> float:
    return (1 + 1 / n3) * (1 - alpha)


def cqc_calibrate(model: CqcModel, sample, i3, alpha=None) -> CqcModel:
    """Step 3: threshold = survey-weighted quantile of ``q(x_i) - s_i`` over ``I3``.

    The level is ``(1 + 1/n3)(1 - alpha)``; at or above 1 the threshold is
    +inf. ``alpha`` overrides the model's own (the quantile net is kept).
    """
    alpha = model.alpha if alpha is None else alpha
    _check_alpha(alpha)
    rows = _calibration(sample)
    (i3,) = _disjoint_nonempty(i3)
    s = record_scores(model.score_net, rows.X[i3], rows.y[i3], rows.weights[i3], model.score_weighting)
    nonconf = quantile_prediction(model, rows.X[i3]) - s
    level = calibration_level(alpha, i3.size)
    if level >= 1 - MASS_RTOL:
        threshold = math.inf
    else:
        threshold = weighted_quantile(WeightedEmpirical(nonconf, rows.weights[i3]), level)
    return replace(model, alpha=alpha, threshold=threshold)


def cqc_membership(model: CqcModel, X) -> np.ndarray:
    """Boolean matrix ``(n, K)``: class ``k`` is in the set for row ``i``."""
    if not model.calibrated:
        raise InvalidStateError("CQC model has not been calibrated")
    s = candidate_scores(model, X)
    if math.isinf(model.threshold):
        return np.ones(s.shape, dtype=bool)
    cut = quantile_prediction(model, X) - model.threshold
    return s >= cut[:, None]


def cqc_predict_set(model: CqcModel, x):
    """Label set(s) ``{k : s(x, k) >= q(x) - Q}`` for one row or a batch."""
    x = np.asarray(x, dtype=np.float64)
    mask = cqc_membership(model, x)
    sets = [LabelSet(frozenset(np.flatnonzero(row).tolist()), model.alpha) for row in mask]
    return sets[0] if x.ndim == 1 else sets


# ---------------------------------------------------------------------------
# diagnostics


def coverage_gap_bound(weights, tv_distances) -> float:
    """``sum_i w_i d_TV(Z, Z^i) / (1 + sum_i w_i)`` for weights and distances in [0, 1]."""
    w = np.asarray(weights, dtype=np.float64)
    d = np.asarray(tv_distances, dtype=np.float64)
    if w.shape != d.shape:
        raise InvalidInputError("weights and distances must align")
    for name, a in (("weights", w), ("tv_distances", d)):
        if not ((a >= 0) & (a <= 1)).all():
            raise InvalidInputError(f"{name} must lie in [0, 1]")
    return float(np.sum(w * d) / (1 + np.sum(w)))


def evaluate_coverage(sets, truths, weights=None, use_weights=False, alpha=None) -> CoverageResult:
    """Fraction of truths inside their sets, survey-weighted when ``use_weights``.

    ``sets`` is a sequence of IntervalSet/LabelSet or a boolean membership
    matrix from :func:`cqc_membership`.
    """
    truths = np.asarray(truths)
    if isinstance(sets, np.ndarray) and sets.dtype == bool:
        if sets.shape[0] != truths.shape[0]:
            raise InvalidInputError("sets and truths must align")
        covered = sets[np.arange(truths.size), truths.astype(np.int64)]
        sizes = sets.sum(axis=1).astype(np.float64)
    else:
        if len(sets) != truths.shape[0]:
            raise InvalidInputError("sets and truths must align")
        covered = np.array([t in s for s, t in zip(sets, truths)], dtype=bool)
        sizes = np.array([s.size for s in sets], dtype=np.float64)
        if alpha is None and len(sets):
            alpha = sets[0].alpha
    if use_weights:
        if weights is None:
            raise InvalidInputError("weighted coverage needs weights")
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != covered.shape:
            raise InvalidInputError("weights must align with sets")
        cov = float(np.dot(w, covered) / w.sum())
        size = float(np.dot(w, sizes) / w.sum())
    else:
        cov = float(covered.mean())
        size = float(sizes.mean())
    return CoverageResult(cov, size, int(covered.size), alpha, bool(use_weights))
