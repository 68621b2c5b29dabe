"""Ranking and probability metrics for binary click prediction."""

from __future__ import annotations

import numpy as np


class UndefinedMetricError(ValueError):
    """Raised when a metric is undefined for the given inputs (e.g. one class).

    ``logloss`` is still well defined in that situation; when available it is
    attached as the ``logloss`` attribute so callers can report it.
    """

    def __init__(self, message: str, logloss: float | None = None):
        super().__init__(message)
        self.logloss = logloss


def auc(scores, labels) -> float:
    """Area under the ROC curve via the rank statistic.

    Equals the probability that a uniformly chosen positive outscores a
    uniformly chosen negative, with ties credited 0.5. Computed with a sort
    and midranks in O(n log n); requires at least one sample of each class.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores and labels must be 1-D and aligned, got {s.shape} / {y.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos + n_neg != y.size:
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # midrank for the tie group occupying positions i..j (1-based ranks)
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum_pos = float(np.sum(ranks[y == 1]))
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def logloss(scores, labels, eps: float = 1e-7) -> float:
    """Mean binary cross-entropy with predictions clipped to [eps, 1-eps]."""
    p = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"scores and labels must be 1-D and aligned, got {p.shape} / {y.shape}")
    if p.size == 0:
        raise ValueError("logloss of an empty sample set")
    p = np.clip(p, eps, 1.0 - eps)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
