"""Exact (non-private) ROC/AUC computation.

Three independent routes to the same number:

* threshold sweep + trapezoid (:func:`confusion_sweep`, :func:`roc_from_counts`,
  :func:`auc_trapezoid`), the path the noisy threshold protocols reuse;
* the rank formula (:func:`auc_rank`), O(M log M);
* the pairwise comparison oracle (:func:`auc_pairwise`), O(P N).

Ties are credited 0.5 in the pairwise oracle and receive average ranks in
the rank formula, which makes the two agree exactly.
"""

from __future__ import annotations

import hashlib
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels


@dataclass(frozen=True)
class Sample:
    score: float
    label: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Scores paired with binary labels.

    ``strict=False`` lifts the ``[0, 1]`` score range check; it exists for
    perturbed-score datasets whose noisy scores are deliberately unclamped.
    """

    scores: np.ndarray
    labels: np.ndarray
    strict: bool = field(default=True, repr=False)

    def __post_init__(self):
        scores = np.array(self.scores, dtype=np.float64).reshape(-1)
        raw_labels = np.asarray(self.labels).reshape(-1)
        if scores.shape != raw_labels.shape:
            raise ValueError(
                f"scores and labels differ in length: {scores.size} vs {raw_labels.size}"
            )
        if raw_labels.size and not np.all((raw_labels == 0) | (raw_labels == 1)):
            raise ValueError("labels must be 0 or 1")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        if self.strict and scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
            raise ValueError("scores must lie in [0, 1]")
        labels = raw_labels.astype(np.int8)
        scores.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_samples(cls, samples: Iterable[Sample]) -> Dataset:
        samples = list(samples)
        return cls([s.score for s in samples], [s.label for s in samples])

    def samples(self) -> list[Sample]:
        return [Sample(float(s), int(y)) for s, y in zip(self.scores, self.labels)]

    def __len__(self) -> int:
        return self.scores.size

    @property
    def m(self) -> int:
        return self.scores.size

    @cached_property
    def p(self) -> int:
        return int(self.labels.sum(dtype=np.int64))

    @property
    def n(self) -> int:
        return self.m - self.p

    @property
    def base_rate(self) -> float:
        return self.p / self.m

    @cached_property
    def ranks(self) -> np.ndarray:
        r = rank_scores(self.scores)
        r.flags.writeable = False
        return r

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.sha1(self.scores.tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()

    def subset(self, index) -> Dataset:
        return Dataset(self.scores[index], self.labels[index], strict=self.strict)

    def with_labels(self, labels) -> Dataset:
        return Dataset(self.scores, labels, strict=self.strict)


@dataclass(frozen=True, eq=False)
class ThresholdGrid:
    thresholds: np.ndarray

    def __post_init__(self):
        t = np.array(self.thresholds, dtype=np.float64).reshape(-1)
        if t.size < 1:
            raise ValueError("a threshold grid needs at least one threshold")
        if np.any(t <= 0.0) or np.any(t > 1.0):
            raise ValueError("thresholds must lie in (0, 1]")
        if np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        t.flags.writeable = False
        object.__setattr__(self, "thresholds", t)

    @classmethod
    def uniform(cls, size: int) -> ThresholdGrid:
        """theta_j = j / size for j = 1..size."""
        if size < 1:
            raise ValueError(f"grid size must be >= 1, got {size}")
        return cls(np.arange(1, size + 1, dtype=np.float64) / size)

    def __len__(self) -> int:
        return self.thresholds.size

    def __eq__(self, other):
        if not isinstance(other, ThresholdGrid):
            return NotImplemented
        return np.array_equal(self.thresholds, other.thresholds)

    __hash__ = None


@dataclass(frozen=True)
class ConfusionCounts:
    tp: float
    fp: float
    tn: float
    fn: float
    threshold: float = math.nan


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def __len__(self) -> int:
        return self.fpr.size


def confusion_at(dataset: Dataset, threshold: float) -> ConfusionCounts:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    pred = dataset.scores >= threshold
    pos = dataset.labels == 1
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    tn = int(np.count_nonzero(~pred & ~pos))
    return ConfusionCounts(float(tp), float(fp), float(tn), float(fn), float(threshold))


def confusion_sweep(dataset: Dataset, grid: ThresholdGrid) -> np.ndarray:
    """Confusion counts at every grid threshold, shape ``(T, 4)`` as
    ``(tp, fp, tn, fn)``."""
    ids = np.zeros(dataset.m, dtype=np.int64)
    return _kernels.grid_confusion(dataset.scores, dataset.labels, ids, 1, grid.thresholds)[0]


def tpr_fpr(counts: ConfusionCounts) -> tuple[float, float] | None:
    """(TPR, FPR), or ``None`` when either denominator is <= 0.

    Noisy counts can make a denominator zero or negative; such a point is
    undefined and the caller drops it.
    """
    pos = counts.tp + counts.fn
    neg = counts.fp + counts.tn
    if pos <= 0 or neg <= 0:
        return None
    return counts.tp / pos, counts.fp / neg


def roc_canonicalize(raw_points: Iterable[tuple[float, float] | None]) -> RocCurve:
    """Drop undefined points, clamp to [0, 1], sort by (fpr, tpr) and pad
    with (0, 0) and (1, 1)."""
    pts = [p for p in raw_points if p is not None]
    if pts:
        arr = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        fpr, tpr = arr[:, 0], arr[:, 1]
    else:
        fpr = tpr = np.empty(0)
    return _canonical(fpr, tpr)


def _canonical(fpr: np.ndarray, tpr: np.ndarray) -> RocCurve:
    fpr = np.clip(fpr, 0.0, 1.0)
    tpr = np.clip(tpr, 0.0, 1.0)
    order = np.lexsort((tpr, fpr))
    fpr = np.concatenate(([0.0], fpr[order], [1.0]))
    tpr = np.concatenate(([0.0], tpr[order], [1.0]))
    return RocCurve(fpr, tpr)


def roc_from_counts(counts: np.ndarray) -> tuple[RocCurve, int]:
    """Vectorised tpr_fpr + roc_canonicalize over a ``(T, 4)`` count array.

    Returns the curve and the number of undefined (dropped) points.
    """
    counts = np.asarray(counts, dtype=np.float64)
    tp, fp, tn, fn = counts[:, 0], counts[:, 1], counts[:, 2], counts[:, 3]
    pos = tp + fn
    neg = fp + tn
    ok = (pos > 0) & (neg > 0)
    curve = _canonical(fp[ok] / neg[ok], tp[ok] / pos[ok])
    return curve, int(ok.size - np.count_nonzero(ok))


def auc_trapezoid(curve: RocCurve) -> float:
    x, y = curve.fpr, curve.tpr
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1])) / 2.0)


def rank_scores(scores: Sequence[float]) -> np.ndarray:
    """Ascending 0-based ranks; ties get the mean of the ranks they span."""
    return _kernels.average_ranks(np.asarray(scores, dtype=np.float64))


def _require_both_classes(p: float, n: float) -> None:
    if p < 1 or n < 1:
        raise ValueError(f"AUC is undefined without both classes (P={p}, N={n})")


def auc_from_rank_sum(rank_sum: float, p: float, n: float) -> float:
    """(sum of positive ranks - P(P-1)/2) / (P N)."""
    return (rank_sum - p * (p - 1) / 2.0) / (p * n)


def auc_rank(dataset: Dataset) -> float:
    p, n = dataset.p, dataset.n
    _require_both_classes(p, n)
    rank_sum = float(np.dot(dataset.ranks, dataset.labels.astype(np.float64)))
    return auc_from_rank_sum(rank_sum, p, n)


def auc_pairwise(dataset: Dataset) -> float:
    """Reference O(P N) oracle: fraction of correctly ordered
    positive/negative pairs, ties counted as half."""
    pos = dataset.scores[dataset.labels == 1]
    neg = dataset.scores[dataset.labels == 0]
    _require_both_classes(pos.size, neg.size)
    diff = pos[:, None] - neg[None, :]
    wins = np.count_nonzero(diff > 0)
    ties = np.count_nonzero(diff == 0)
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def auc_sweep(dataset: Dataset, grid: ThresholdGrid) -> float:
    """Central (non-private) AUC from the exact threshold sweep."""
    curve, _ = roc_from_counts(confusion_sweep(dataset, grid))
    return auc_trapezoid(curve)
