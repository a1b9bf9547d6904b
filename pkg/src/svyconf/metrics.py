"""Survey-weighted binary classification metrics.

AUC and cross-entropy use the survey weights; accuracy, recall, precision
and F1 are plain count formulas by default, with weighted variants available
through ``weighted=True`` (these are an extension, not part of the standard
report).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UndefinedMetricError

PROB_CLIP = 1e-12


@dataclass(frozen=True)
class MetricsReport:
    auc: float
    accuracy: float
    recall: float | None
    precision: float | None
    f1: float | None
    cross_entropy: float
    confusion: tuple  # (TN, FP, FN, TP)
    n_eval: int
    cross_entropy_sum: float | None = None

    KEYS = ("auc", "accuracy", "recall", "precision", "f1", "cross_entropy", "confusion")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.KEYS}
        d["confusion"] = list(self.confusion)
        d["n_eval"] = self.n_eval
        d["cross_entropy_sum"] = self.cross_entropy_sum
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _binary(labels):
    labels = np.asarray(labels)
    if not np.isin(labels, (0, 1)).all():
        raise InvalidInputError("labels must be 0 or 1")
    return labels.astype(bool)


def weighted_auc(probs, labels, weights=None) -> float:
    """Weighted Mann-Whitney AUC over positive/negative pairs, ties counted 1/2.

    Sorting-based, O(n log n): each positive collects the weight of negatives
    scored strictly below it plus half the weight of tied negatives.
    """
    probs = np.asarray(probs, dtype=np.float64)
    pos = _binary(labels)
    w = np.ones_like(probs) if weights is None else np.asarray(weights, dtype=np.float64)
    if probs.shape != pos.shape or w.shape != probs.shape:
        raise InvalidInputError("scores, labels and weights must align")
    if not (w > 0).all():
        raise InvalidInputError("weights must be positive")
    if pos.all() or not pos.any():
        raise UndefinedMetricError("AUC needs at least one positive and one negative")

    uniq, inv = np.unique(probs, return_inverse=True)
    neg_w = np.bincount(inv, weights=np.where(pos, 0.0, w), minlength=uniq.size)
    pos_w = np.bincount(inv, weights=np.where(pos, w, 0.0), minlength=uniq.size)
    below = np.concatenate([[0.0], np.cumsum(neg_w)[:-1]])
    num = np.sum(pos_w * (below + 0.5 * neg_w))
    den = pos_w.sum() * neg_w.sum()
    return float(num / den)


def confusion_counts(pred, labels):
    pred = _binary(pred)
    truth = _binary(labels)
    if pred.shape != truth.shape:
        raise InvalidInputError("predictions and labels must have the same length")
    tp = int(np.sum(pred & truth))
    tn = int(np.sum(~pred & ~truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    return tn, fp, fn, tp


def _ratio(a, b):
    return None if b == 0 else a / b


def _scores_from_counts(tn, fp, fn, tp):
    total = tn + fp + fn + tp
    accuracy = _ratio(tp + tn, total)
    recall = _ratio(tp, tp + fn)
    precision = _ratio(tp, tp + fp)
    if recall is None or precision is None or recall + precision == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return accuracy, recall, precision, f1


def metrics_from_confusion(confusion):
    """(accuracy, recall, precision, f1) from ``(TN, FP, FN, TP)``; None where undefined."""
    return _scores_from_counts(*confusion)


def confusion_metrics(pred, labels, weights=None, weighted=False):
    """Accuracy, recall, precision, F1 and the ``(TN, FP, FN, TP)`` counts.

    With ``weighted=True`` the ratios use summed survey weights instead of
    counts; the returned confusion tuple is always raw counts.
    """
    counts = confusion_counts(pred, labels)
    if not weighted:
        return (*_scores_from_counts(*counts), counts)
    if weights is None:
        raise InvalidInputError("weighted metrics need weights")
    p = _binary(pred)
    t = _binary(labels)
    w = np.asarray(weights, dtype=np.float64)
    cells = (w[~p & ~t].sum(), w[p & ~t].sum(), w[~p & t].sum(), w[p & t].sum())
    return (*_scores_from_counts(*cells), counts)


def weighted_log_loss(probs, labels, weights=None, normalize=True) -> float:
    """Weighted binary cross-entropy; divided by the total weight when ``normalize``."""
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLIP, 1 - PROB_CLIP)
    y = _binary(labels).astype(np.float64)
    w = np.ones_like(p) if weights is None else np.asarray(weights, dtype=np.float64)
    if p.shape != y.shape or w.shape != p.shape:
        raise InvalidInputError("probabilities, labels and weights must align")
    if not (w > 0).all():
        raise InvalidInputError("weights must be positive")
    total = -float(np.sum(w * (y * np.log(p) + (1 - y) * np.log1p(-p))))
    return total / float(w.sum()) if normalize else total


def evaluate(probs, labels, weights, threshold=0.5, weighted_counts=False) -> MetricsReport:
    """Full report for predicted P(Y = 1) against 0/1 labels."""
    probs = np.asarray(probs, dtype=np.float64)
    pred = (probs >= threshold).astype(np.int64)
    acc, rec, prec, f1, counts = confusion_metrics(pred, labels, weights, weighted=weighted_counts)
    try:
        auc = weighted_auc(probs, labels, weights)
    except UndefinedMetricError:
        auc = math.nan
    return MetricsReport(
        auc=auc,
        accuracy=acc,
        recall=rec,
        precision=prec,
        f1=f1,
        cross_entropy=weighted_log_loss(probs, labels, weights),
        confusion=counts,
        n_eval=int(probs.size),
        cross_entropy_sum=weighted_log_loss(probs, labels, weights, normalize=False),
    )


def report_from_dict(d) -> MetricsReport:
    d = dict(d)
    d["confusion"] = tuple(d["confusion"])
    return MetricsReport(**d)


__all__ = [
    "MetricsReport", "weighted_auc", "confusion_counts", "confusion_metrics",
    "metrics_from_confusion", "weighted_log_loss", "evaluate", "report_from_dict",
]
