"""Confusion-matrix statistics and the ROC curve.

Positive = depression. Classification is strict: predict 1 iff p > threshold.
Undefined ratios (zero denominator, single-class ROC) raise instead of
returning a silent placeholder; callers that want NaN handle it themselves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, UndefinedMetricError

__all__ = [
    "ConfusionCounts",
    "confusion",
    "accuracy",
    "sensitivity",
    "specificity",
    "roc_curve",
    "roc_auc",
]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def _check_scores(probabilities, labels) -> tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(probabilities, dtype=np.float64)
    labs = np.asarray(labels)
    if probs.ndim != 1 or labs.ndim != 1 or probs.shape != labs.shape:
        raise ContractError(
            f"probabilities and labels must be equal-length vectors, "
            f"got {probs.shape} and {labs.shape}")
    if probs.size == 0:
        raise ContractError("empty score set")
    if np.any(probs < 0) or np.any(probs > 1) or not np.all(np.isfinite(probs)):
        raise ContractError("probabilities must lie in [0, 1]")
    if not np.all(np.isin(labs, (0, 1))):
        raise ContractError("labels must be 0 or 1")
    return probs, labs.astype(np.int64)


def confusion(probabilities, labels, threshold: float = 0.5) -> ConfusionCounts:
    probs, labs = _check_scores(probabilities, labels)
    pred = probs > threshold
    pos = labs == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise UndefinedMetricError("accuracy undefined: no evaluated subjects")
    return (c.tp + c.tn) / c.total


def sensitivity(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        raise UndefinedMetricError("sensitivity undefined: no positive subjects")
    return c.tp / (c.tp + c.fn)


def specificity(c: ConfusionCounts) -> float:
    if c.tn + c.fp == 0:
        raise UndefinedMetricError("specificity undefined: no negative subjects")
    return c.tn / (c.tn + c.fp)


def roc_curve(probabilities, labels) -> list[tuple[float, float, float]]:
    """Sweep the threshold over distinct scores, high to low.

    Returns (threshold, FPR, TPR) points starting at (+inf, 0, 0) and ending
    at (min score, 1, 1). Tied scores move the operating point in one step,
    which is what gives ties half credit in the trapezoid area.
    """
    probs, labs = _check_scores(probabilities, labels)
    n_pos = int(np.sum(labs == 1))
    n_neg = labs.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC undefined: both classes must be present")

    order = np.argsort(-probs, kind="stable")
    sorted_probs = probs[order]
    sorted_labs = labs[order]
    points = [(float("inf"), 0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < sorted_probs.size:
        j = i
        while j < sorted_probs.size and sorted_probs[j] == sorted_probs[i]:
            tp += int(sorted_labs[j] == 1)
            fp += int(sorted_labs[j] == 0)
            j += 1
        points.append((float(sorted_probs[i]), fp / n_neg, tp / n_pos))
        i = j
    return points


def roc_auc(probabilities, labels) -> float:
    """Area under the ROC curve by the trapezoid rule."""
    points = roc_curve(probabilities, labels)
    area = 0.0
    for (_, x0, y0), (_, x1, y1) in zip(points[:-1], points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area
