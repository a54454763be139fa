"""Evaluation metrics: binary AUROC, macro one-vs-rest AUROC, MAE.

AUROC uses the rank formulation with average ranks, so tied scores
contribute half a concordant pair. Macro AUROC is the unweighted mean of
per-class one-vs-rest values; classes absent from the labels are excluded
with a warning.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class UndefinedMetricError(ValueError):
    """The metric is undefined for these labels (e.g. single-class AUROC)."""


@dataclass(frozen=True)
class MetricReport:
    metric: str
    value: float
    n: int
    per_class: dict[int, float] = field(default_factory=dict)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc_binary(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based AUROC; ties contribute 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes present")
    ranks = _average_ranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auroc_macro_ovr(scores: np.ndarray, labels: np.ndarray) -> MetricReport:
    """Macro one-vs-rest AUROC for (n, K) score columns and labels in 0..K-1."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise ValueError("scores must be (n, K) aligned with labels")
    n, k = scores.shape
    per_class: dict[int, float] = {}
    for cls in range(k):
        onevr = (labels == cls).astype(np.int64)
        if onevr.sum() in (0, n):
            log.warning("class %d absent from labels; excluded from macro AUROC", cls)
            continue
        per_class[cls] = auroc_binary(scores[:, cls], onevr)
    if not per_class:
        raise UndefinedMetricError("no class has both positives and negatives")
    value = float(np.mean(list(per_class.values())))
    return MetricReport(metric="macro_auroc", value=value, n=n, per_class=per_class)


def mae(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have equal length")
    return float(np.mean(np.abs(pred - truth)))


@dataclass(frozen=True)
class TargetScaler:
    """z-score map for regression targets, fit on training statistics."""

    mean: float
    std: float

    @classmethod
    def fit(cls, y: np.ndarray) -> "TargetScaler":
        y = np.asarray(y, dtype=np.float64)
        sd = float(y.std())
        return cls(mean=float(y.mean()), std=sd if sd > 0 else 1.0)

    def normalize(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean
