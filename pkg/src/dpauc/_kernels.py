"""Hot inner loops shared by the metrics and federation modules.

Every kernel has two implementations with identical outputs: a numba
``@njit`` version and a vectorised numpy version.  The numba path is used
when numba imports cleanly, unless the environment variable
``DPAUC_DISABLE_NUMBA`` is set to a truthy value (``1``, ``true``, ``yes``).

Both implementations stay importable as ``numba_impl`` / ``numpy_impl`` so
tests and ``benchmarks/bench_kernels.py`` can compare them directly.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

_TRUTHY = {"1", "true", "yes", "on"}

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("DPAUC_DISABLE_NUMBA", "").strip().lower() not in _TRUTHY


# ---------------------------------------------------------------------------
# numpy reference implementations


def _average_ranks_np(scores):
    n = scores.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.float64)
    order = np.argsort(scores, kind="stable")
    ordered = scores[order]
    starts_group = np.empty(n, dtype=bool)
    starts_group[0] = True
    np.not_equal(ordered[1:], ordered[:-1], out=starts_group[1:])
    group = np.cumsum(starts_group) - 1
    first = np.flatnonzero(starts_group)
    last = np.append(first[1:], n) - 1
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = (0.5 * (first + last))[group]
    return ranks


def _grid_confusion_np(scores, labels, client_ids, n_clients, thresholds):
    n_thr = thresholds.shape[0]
    # bin b = number of thresholds <= score; predicted positive at j iff j < b
    bins = np.searchsorted(thresholds, scores, side="right")
    pos = labels == 1
    width = n_thr + 1
    hist_pos = np.bincount(client_ids[pos] * width + bins[pos], minlength=n_clients * width)
    hist_neg = np.bincount(client_ids[~pos] * width + bins[~pos], minlength=n_clients * width)
    hist_pos = hist_pos.reshape(n_clients, width).astype(np.float64)
    hist_neg = hist_neg.reshape(n_clients, width).astype(np.float64)
    # suffix sums over bins j+1..n_thr
    above_pos = np.cumsum(hist_pos[:, ::-1], axis=1)[:, ::-1][:, 1:]
    above_neg = np.cumsum(hist_neg[:, ::-1], axis=1)[:, ::-1][:, 1:]
    total_pos = hist_pos.sum(axis=1, keepdims=True)
    total_neg = hist_neg.sum(axis=1, keepdims=True)
    out = np.empty((n_clients, n_thr, 4), dtype=np.float64)
    out[:, :, 0] = above_pos
    out[:, :, 1] = above_neg
    out[:, :, 2] = total_neg - above_neg
    out[:, :, 3] = total_pos - above_pos
    return out


def _client_rank_stats_np(ranks, labels, client_ids, n_clients):
    y = labels.astype(np.float64)
    local_sum = np.bincount(client_ids, weights=ranks * y, minlength=n_clients)
    local_p = np.bincount(client_ids, weights=y, minlength=n_clients)
    size = np.bincount(client_ids, minlength=n_clients).astype(np.float64)
    max_rank = np.full(n_clients, -1.0)
    np.maximum.at(max_rank, client_ids, ranks)
    return local_sum, local_p, size, max_rank


numpy_impl = SimpleNamespace(
    average_ranks=_average_ranks_np,
    grid_confusion=_grid_confusion_np,
    client_rank_stats=_client_rank_stats_np,
)


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @njit(cache=True)
    def _average_ranks_nb(scores):
        n = scores.shape[0]
        order = np.argsort(scores, kind="mergesort")
        ranks = np.empty(n, dtype=np.float64)
        i = 0
        while i < n:
            j = i
            while j + 1 < n and scores[order[j + 1]] == scores[order[i]]:
                j += 1
            r = 0.5 * (i + j)
            for t in range(i, j + 1):
                ranks[order[t]] = r
            i = j + 1
        return ranks

    @njit(cache=True)
    def _grid_confusion_nb(scores, labels, client_ids, n_clients, thresholds):
        n_thr = thresholds.shape[0]
        hist = np.zeros((n_clients, n_thr + 1, 2), dtype=np.float64)
        for i in range(scores.shape[0]):
            b = np.searchsorted(thresholds, scores[i], side="right")
            hist[client_ids[i], b, 1 if labels[i] == 1 else 0] += 1.0
        out = np.empty((n_clients, n_thr, 4), dtype=np.float64)
        for k in range(n_clients):
            total_pos = 0.0
            total_neg = 0.0
            for b in range(n_thr + 1):
                total_neg += hist[k, b, 0]
                total_pos += hist[k, b, 1]
            above_pos = 0.0
            above_neg = 0.0
            for j in range(n_thr - 1, -1, -1):
                above_neg += hist[k, j + 1, 0]
                above_pos += hist[k, j + 1, 1]
                out[k, j, 0] = above_pos
                out[k, j, 1] = above_neg
                out[k, j, 2] = total_neg - above_neg
                out[k, j, 3] = total_pos - above_pos
        return out

    @njit(cache=True)
    def _client_rank_stats_nb(ranks, labels, client_ids, n_clients):
        local_sum = np.zeros(n_clients, dtype=np.float64)
        local_p = np.zeros(n_clients, dtype=np.float64)
        size = np.zeros(n_clients, dtype=np.float64)
        max_rank = np.full(n_clients, -1.0)
        for i in range(ranks.shape[0]):
            k = client_ids[i]
            size[k] += 1.0
            if labels[i] == 1:
                local_sum[k] += ranks[i]
                local_p[k] += 1.0
            if ranks[i] > max_rank[k]:
                max_rank[k] = ranks[i]
        return local_sum, local_p, size, max_rank

    numba_impl = SimpleNamespace(
        average_ranks=_average_ranks_nb,
        grid_confusion=_grid_confusion_nb,
        client_rank_stats=_client_rank_stats_nb,
    )
else:  # pragma: no cover
    numba_impl = None

_impl = numba_impl if USE_NUMBA else numpy_impl


def average_ranks(scores: np.ndarray) -> np.ndarray:
    """0-based ascending ranks; tied scores share the mean of their ranks."""
    return _impl.average_ranks(np.ascontiguousarray(scores, dtype=np.float64))


def grid_confusion(
    scores: np.ndarray,
    labels: np.ndarray,
    client_ids: np.ndarray,
    n_clients: int,
    thresholds: np.ndarray,
) -> np.ndarray:
    """Per-client confusion counts on a threshold grid.

    Returns an array of shape ``(n_clients, len(thresholds), 4)`` whose last
    axis is ``(tp, fp, tn, fn)``.  A sample is predicted positive at
    threshold ``t`` when ``score >= t``.
    """
    return _impl.grid_confusion(
        np.ascontiguousarray(scores, dtype=np.float64),
        np.ascontiguousarray(labels, dtype=np.int8),
        np.ascontiguousarray(client_ids, dtype=np.int64),
        int(n_clients),
        np.ascontiguousarray(thresholds, dtype=np.float64),
    )


def client_rank_stats(
    ranks: np.ndarray, labels: np.ndarray, client_ids: np.ndarray, n_clients: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-client ``(sum of rank*label, positives, size, max rank)``.

    Empty clients report a max rank of -1.
    """
    return _impl.client_rank_stats(
        np.ascontiguousarray(ranks, dtype=np.float64),
        np.ascontiguousarray(labels, dtype=np.int8),
        np.ascontiguousarray(client_ids, dtype=np.int64),
        int(n_clients),
    )


def backend() -> str:
    return "numba" if _impl is numba_impl else "numpy"


__all__ = [
    "HAVE_NUMBA",
    "USE_NUMBA",
    "average_ranks",
    "backend",
    "client_rank_stats",
    "grid_confusion",
    "numba_impl",
    "numpy_impl",
]

if HAVE_NUMBA:
    del numba
