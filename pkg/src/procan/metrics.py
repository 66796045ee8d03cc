"""Threshold metrics, rank-based AUC and bootstrap estimates."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import UsageError

log = logging.getLogger(__name__)

METRIC_FIELDS = ("accuracy", "sensitivity", "precision", "f1", "auc")
CSV_HEADER = ("phase", "epoch", "split") + METRIC_FIELDS


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def _scored(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise UsageError(f"scores and labels differ in length: {s.size} vs {y.size}")
    if not np.all((y == 0) | (y == 1)):
        raise UsageError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Scores at or above ``threshold`` count as positive predictions."""
    s, y = _scored(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def classification_metrics(c: ConfusionCounts) -> dict[str, float | None]:
    """Accuracy, sensitivity, precision and F1; ``None`` marks a zero denominator."""
    return {
        "accuracy": _ratio(c.tp + c.tn, c.total),
        "sensitivity": _ratio(c.tp, c.tp + c.fn),
        "precision": _ratio(c.tp, c.tp + c.fp),
        "f1": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
    }


def auc(scores, labels) -> float:
    """P(score of a positive > score of a negative), ties counted as one half.

    Computed from midranks of the pooled scores (Mann-Whitney U).
    """
    s, y = _scored(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UsageError("AUC needs at least one positive and one negative sample")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(s.size, dtype=np.float64)
    # midranks over runs of tied scores
    boundaries = np.flatnonzero(np.diff(sorted_s)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [s.size]))
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = (a + b + 1) / 2.0
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_trapezoid(scores, labels) -> float:
    """Area under the empirical ROC curve by the trapezoid rule.

    Thresholds sweep the distinct scores from high to low; tied scores move
    the curve diagonally, which is what makes this agree with the rank form.
    """
    s, y = _scored(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UsageError("AUC needs at least one positive and one negative sample")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    distinct = np.flatnonzero(np.diff(s_sorted)) if s.size > 1 else np.array([], dtype=int)
    cut = np.concatenate((distinct, [s.size - 1]))
    tps = np.cumsum(y_sorted)[cut]
    fps = (cut + 1) - tps
    tpr = np.concatenate(([0], tps)) / n_pos
    fpr = np.concatenate(([0], fps)) / n_neg
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def auc_pairwise(scores, labels) -> float:
    """Brute-force pair count; quadratic, for checking the fast forms."""
    s, y = _scored(scores, labels)
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise UsageError("AUC needs at least one positive and one negative sample")
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (pos.size * neg.size)


def evaluate_scores(scores, labels, threshold: float = 0.5) -> dict[str, float | None]:
    """All five metrics; AUC is ``None`` when only one class is present."""
    out = classification_metrics(confusion(scores, labels, threshold))
    _, y = _scored(scores, labels)
    out["auc"] = auc(scores, labels) if 0 < y.sum() < y.size else None
    return out


def bootstrap_ci(
    scores,
    labels,
    metric: Callable[[np.ndarray, np.ndarray], float | None] = auc,
    iterations: int = 1000,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Mean and standard deviation of ``metric`` over resamples with replacement.

    Resamples containing a single class, or on which the metric is
    undefined, are skipped and counted in the log.
    """
    if iterations < 2:
        raise UsageError("bootstrap needs at least 2 iterations")
    s, y = _scored(scores, labels)
    rng = rng if rng is not None else np.random.default_rng(0)
    values = []
    skipped = 0
    for _ in range(iterations):
        idx = rng.integers(0, s.size, size=s.size)
        ys = y[idx]
        if ys.min() == ys.max():
            skipped += 1
            continue
        v = metric(s[idx], ys)
        if v is None or (isinstance(v, float) and math.isnan(v)):
            skipped += 1
            continue
        values.append(float(v))
    if skipped:
        log.info("bootstrap skipped %d of %d degenerate resamples", skipped, iterations)
    if not values:
        raise UsageError("metric was undefined on every bootstrap resample")
    arr = np.asarray(values)
    return float(arr.mean()), float(arr.std())


def hanley_mcneil_se(auc_value: float, n_pos: int, n_neg: int) -> float:
    """Analytic standard error of an AUC estimate (Hanley & McNeil, 1982)."""
    a = auc_value
    q1 = a / (2 - a)
    q2 = 2 * a * a / (1 + a)
    var = (a * (1 - a) + (n_pos - 1) * (q1 - a * a) + (n_neg - 1) * (q2 - a * a)) / (n_pos * n_neg)
    return math.sqrt(max(var, 0.0))


def format_row(phase: str, epoch, split: str, values: dict) -> list[str]:
    """One metrics CSV row; undefined metrics are written as ``nan``."""

    def fmt(v):
        return "nan" if v is None else f"{v:.6f}"

    return [phase, str(epoch), split] + [fmt(values.get(k)) for k in METRIC_FIELDS]
