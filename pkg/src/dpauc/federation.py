"""In-process simulation of K clients and one server computing a private AUC.

Protocols
---------
``threshold-laplace`` / ``threshold-gaussian``
    Each client releases noisy (TP, FP, TN, FN) for every grid threshold;
    the server sums them, builds a ROC curve and integrates it.
``rank-rr``
    Labels are flipped once by randomized response.  The server ranks the
    pooled scores, and clients return (sum of rank * flipped label,
    flipped positives, flipped negatives).  The server computes the rank
    AUC and removes the flip bias.
``rank-laplace``
    Same exchange with true labels; clients add Laplace noise to the rank
    sum and to the positive count and derive the negative count from the
    noisy positive count.

Noise draw order (per trial, in stream order): the IID permutation, then
for threshold protocols a ``(K, T, 4)`` block in C order (client, ascending
threshold, tp/fp/tn/fn); for rank-laplace a ``(K, 2)`` block
(rank-sum noise, positive-count noise) or ``(K,)`` when P and N are exact.
Label flips for rank-rr come from a separate child stream.
"""

from __future__ import annotations

import enum
import logging
from collections import OrderedDict
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .debias import clean_auc_from_noisy
from .mechanisms import (
    Mechanism,
    NoiseSpec,
    RrSpec,
    SeededRng,
    eps_per_stat_for,
    laplace_from_uniform,
    rr_flip,
    split_budget,
)
from .metrics import (
    Dataset,
    RocCurve,
    ThresholdGrid,
    auc_from_rank_sum,
    auc_trapezoid,
    roc_from_counts,
)

log = logging.getLogger(__name__)

_FLIP_STREAM = 1


class TrialFailure(RuntimeError):
    """A single protocol run could not produce an estimate."""


class EstimateCollapsed(TrialFailure):
    """Noisy positive/negative totals made the AUC denominator <= 0."""


class PartitionMode(str, enum.Enum):
    IID = "iid"
    NON_IID = "noniid"


class Protocol(str, enum.Enum):
    THRESHOLD_LAPLACE = "threshold-laplace"
    THRESHOLD_GAUSSIAN = "threshold-gaussian"
    RANK_RR = "rank-rr"
    RANK_LAPLACE = "rank-laplace"

    @property
    def is_threshold(self) -> bool:
        return self in (Protocol.THRESHOLD_LAPLACE, Protocol.THRESHOLD_GAUSSIAN)


class SensitivityMode(str, enum.Enum):
    LOCAL_MAX_RANK = "local-max-rank"
    GLOBAL_M_MINUS_1 = "global-m-minus-1"


# ---------------------------------------------------------------------------
# partitioning


@dataclass(frozen=True, eq=False)
class Partition:
    """Client assignment for every sample: ``client_ids[i]`` owns sample i."""

    client_ids: np.ndarray
    n_clients: int

    def __post_init__(self):
        ids = np.asarray(self.client_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_clients):
            raise ValueError("client ids out of range")
        ids.flags.writeable = False
        object.__setattr__(self, "client_ids", ids)

    def indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.client_ids == k)

    @property
    def assignments(self) -> list[np.ndarray]:
        order = np.argsort(self.client_ids, kind="stable")
        return np.split(order, np.cumsum(self.sizes())[:-1])

    def sizes(self) -> np.ndarray:
        return np.bincount(self.client_ids, minlength=self.n_clients)


def _check_k(m: int, k: int) -> None:
    if k < 1:
        raise ValueError(f"need at least one client, got K={k}")
    if k > m:
        raise ValueError(f"K={k} clients exceeds M={m} samples")


def _block_ids(m: int, k: int) -> np.ndarray:
    # near-equal contiguous blocks, larger blocks first (as np.array_split)
    base, extra = divmod(m, k)
    sizes = np.full(k, base, dtype=np.int64)
    sizes[:extra] += 1
    return np.repeat(np.arange(k, dtype=np.int64), sizes)


def partition_iid(dataset: Dataset, k: int, rng: SeededRng) -> Partition:
    _check_k(dataset.m, k)
    ids = np.empty(dataset.m, dtype=np.int64)
    ids[rng.permutation(dataset.m)] = _block_ids(dataset.m, k)
    return Partition(ids, k)


def partition_noniid(dataset: Dataset, k: int) -> Partition:
    """Score-sorted contiguous blocks; client 0 holds the lowest scores."""
    _check_k(dataset.m, k)
    ids = np.empty(dataset.m, dtype=np.int64)
    ids[np.argsort(dataset.scores, kind="stable")] = _block_ids(dataset.m, k)
    return Partition(ids, k)


def make_partition(dataset: Dataset, k: int, mode: PartitionMode, rng: SeededRng) -> Partition:
    if PartitionMode(mode) is PartitionMode.IID:
        return partition_iid(dataset, k, rng)
    return partition_noniid(dataset, k)


# ---------------------------------------------------------------------------
# threshold protocol


@dataclass(frozen=True, eq=False)
class ThresholdReport:
    """One client's noisy counts; ``counts[j]`` is (tp, fp, tn, fn) at
    ``grid.thresholds[j]``."""

    client_id: int
    grid: ThresholdGrid
    counts: np.ndarray

    tp = property(lambda self: self.counts[:, 0])
    fp = property(lambda self: self.counts[:, 1])
    tn = property(lambda self: self.counts[:, 2])
    fn = property(lambda self: self.counts[:, 3])


@dataclass(frozen=True)
class ThresholdAggregate:
    auc: float
    curve: RocCurve = field(repr=False)
    dropped_points: int


def _stat_noise(mechanism: Mechanism, eps_per_stat: float, delta: float) -> NoiseSpec:
    mechanism = Mechanism(mechanism)
    if mechanism is Mechanism.NONE:
        return NoiseSpec(Mechanism.NONE)
    if mechanism is Mechanism.LAPLACE:
        return NoiseSpec(mechanism, 1.0, eps_per_stat)
    return NoiseSpec(mechanism, 1.0, eps_per_stat, delta)


def threshold_reports(
    dataset: Dataset,
    partition: Partition,
    grid: ThresholdGrid,
    eps_per_stat: float,
    mechanism: Mechanism,
    rng: SeededRng,
    delta: float = 0.0,
) -> list[ThresholdReport]:
    """Reports of every client at once.  Stream-identical to calling
    :func:`client_threshold_report` for clients 0..K-1 in order."""
    spec = _stat_noise(mechanism, eps_per_stat, delta)
    counts = _kernels.grid_confusion(
        dataset.scores, dataset.labels, partition.client_ids, partition.n_clients, grid.thresholds
    )
    if spec.mechanism is not Mechanism.NONE:
        counts = counts + spec.sample(rng, counts.shape)
    return [ThresholdReport(k, grid, counts[k]) for k in range(partition.n_clients)]


def client_threshold_report(
    scores,
    labels,
    grid: ThresholdGrid,
    eps_per_stat: float,
    mechanism: Mechanism,
    rng: SeededRng,
    client_id: int = 0,
    delta: float = 0.0,
) -> ThresholdReport:
    """Exact local counts at each threshold plus four independent noise
    draws (sensitivity 1, budget ``eps_per_stat`` each).

    A client with no samples still reports (noise only).
    """
    spec = _stat_noise(mechanism, eps_per_stat, delta)
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.zeros(scores.size, dtype=np.int64)
    counts = _kernels.grid_confusion(scores, np.asarray(labels), ids, 1, grid.thresholds)[0]
    if spec.mechanism is not Mechanism.NONE:
        counts = counts + spec.sample(rng, counts.shape)
    return ThresholdReport(client_id, grid, counts)


def server_threshold_aggregate(
    reports: Sequence[ThresholdReport], grid: ThresholdGrid | None = None
) -> ThresholdAggregate:
    if not reports:
        raise ValueError("no reports to aggregate")
    grid = reports[0].grid if grid is None else grid
    for r in reports:
        if r.grid != grid:
            raise ValueError(f"client {r.client_id} reported on a different threshold grid")
    total = np.sum([r.counts for r in reports], axis=0)
    curve, dropped = roc_from_counts(total)
    return ThresholdAggregate(auc_trapezoid(curve), curve, dropped)


# ---------------------------------------------------------------------------
# rank protocols


@dataclass(frozen=True)
class RankReport:
    client_id: int
    local_sum: float
    local_p: float
    local_n: float


@dataclass(frozen=True, eq=False)
class RankReports:
    """Reports of all K clients as parallel arrays."""

    local_sum: np.ndarray
    local_p: np.ndarray
    local_n: np.ndarray

    def __len__(self) -> int:
        return self.local_sum.size

    def __iter__(self):
        for k in range(len(self)):
            yield RankReport(k, float(self.local_sum[k]), float(self.local_p[k]), float(self.local_n[k]))


_flip_cache: OrderedDict[tuple, np.ndarray] = OrderedDict()
_FLIP_CACHE_SIZE = 16


def flip_labels_once(dataset: Dataset, epsilon: float, seed: int) -> np.ndarray:
    """Randomized-response labels for ``dataset``, flipped once per
    (dataset, epsilon, seed) and reused on later calls at no extra budget.

    Flips use a child stream of ``seed`` so they are independent of any
    other draws made from ``SeededRng(seed)``.
    """
    key = (dataset.fingerprint, float(epsilon), int(seed))
    cached = _flip_cache.get(key)
    if cached is not None:
        _flip_cache.move_to_end(key)
        return cached
    flipped = rr_flip(dataset.labels, RrSpec(epsilon), SeededRng(seed).spawn(_FLIP_STREAM))
    flipped.flags.writeable = False
    _flip_cache[key] = flipped
    if len(_flip_cache) > _FLIP_CACHE_SIZE:
        _flip_cache.popitem(last=False)
    return flipped


def client_rank_rr_report(flipped_labels, ranks, client_id: int = 0) -> RankReport:
    """Rank sum and counts over flipped labels; no extra noise."""
    y = np.asarray(flipped_labels, dtype=np.float64)
    r = np.asarray(ranks, dtype=np.float64)
    p = float(y.sum())
    return RankReport(client_id, float(np.dot(r, y)), p, float(y.size) - p)


def rank_rr_reports(flipped_labels, ranks, partition: Partition) -> RankReports:
    s, p, size, _ = _kernels.client_rank_stats(
        ranks, flipped_labels, partition.client_ids, partition.n_clients
    )
    return RankReports(s, p, size - p)


def _sensitivities(
    max_rank: np.ndarray, mode: SensitivityMode, n_total: int | None
) -> np.ndarray:
    if SensitivityMode(mode) is SensitivityMode.GLOBAL_M_MINUS_1:
        if n_total is None or n_total < 2:
            raise ValueError("global M-1 sensitivity needs the total sample count M >= 2")
        return np.full(max_rank.shape, float(n_total - 1))
    # rank 0 (or an empty client) would give a zero-scale Laplace
    return np.maximum(max_rank, 1.0)


def _noisy_rank_reports(local_sum, local_p, size, max_rank, eps_sum, eps_p, mode, rng, n_total):
    if not eps_sum > 0:
        raise ValueError(f"eps_sum must be > 0, got {eps_sum}")
    delta_sum = _sensitivities(max_rank, mode, n_total)
    if eps_p is None:
        u = rng.uniform((local_sum.size,))
        noisy_sum = local_sum + laplace_from_uniform(u, delta_sum / eps_sum)
        noisy_p = local_p
    else:
        if not eps_p > 0:
            raise ValueError(f"eps_p must be > 0, got {eps_p}")
        u = rng.uniform((local_sum.size, 2))
        noisy_sum = local_sum + laplace_from_uniform(u[:, 0], delta_sum / eps_sum)
        noisy_p = local_p + laplace_from_uniform(u[:, 1], 1.0 / eps_p)
    return noisy_sum, noisy_p, size - noisy_p


def client_rank_laplace_report(
    labels,
    ranks,
    eps_sum: float,
    eps_p: float | None,
    mode: SensitivityMode,
    rng: SeededRng,
    n_total: int | None = None,
    client_id: int = 0,
) -> RankReport:
    """Local rank sum with Laplace noise, noisy positive count, and the
    negative count derived as ``size - noisy positives``.

    ``eps_p=None`` keeps the positive count exact (analysis-only).
    ``n_total`` is the pooled sample count, needed for the M-1 sensitivity.
    """
    y = np.asarray(labels, dtype=np.float64)
    r = np.asarray(ranks, dtype=np.float64)
    max_rank = np.array([r.max() if r.size else -1.0])
    s, p, n = _noisy_rank_reports(
        np.array([np.dot(r, y)]), np.array([y.sum()]), np.array([float(y.size)]),
        max_rank, eps_sum, eps_p, mode, rng, n_total,
    )
    return RankReport(client_id, float(s[0]), float(p[0]), float(n[0]))


def rank_laplace_reports(
    labels,
    ranks,
    partition: Partition,
    eps_sum: float,
    eps_p: float | None,
    mode: SensitivityMode,
    rng: SeededRng,
) -> RankReports:
    s, p, size, max_rank = _kernels.client_rank_stats(
        ranks, labels, partition.client_ids, partition.n_clients
    )
    return RankReports(
        *_noisy_rank_reports(s, p, size, max_rank, eps_sum, eps_p, mode, rng, len(ranks))
    )


def rank_totals(reports: RankReports | Sequence[RankReport]) -> tuple[float, float, float]:
    """(globalSum, P-bar, N-bar)."""
    if isinstance(reports, RankReports):
        return float(reports.local_sum.sum()), float(reports.local_p.sum()), float(reports.local_n.sum())
    if not reports:
        raise ValueError("no reports to aggregate")
    return (
        float(sum(r.local_sum for r in reports)),
        float(sum(r.local_p for r in reports)),
        float(sum(r.local_n for r in reports)),
    )


def server_rank_aggregate(
    reports: RankReports | Sequence[RankReport],
    exact_pn: tuple[int, int] | None = None,
) -> float:
    """(globalSum - P(P-1)/2) / (P N) from the summed client reports.

    ``exact_pn`` substitutes the true (P, N) for the reported totals, an
    analysis-only switch.  Raises :class:`EstimateCollapsed` when P*N <= 0.
    """
    global_sum, p_bar, n_bar = rank_totals(reports)
    if exact_pn is not None:
        p_bar, n_bar = map(float, exact_pn)
    if p_bar <= 0 or n_bar <= 0:
        raise EstimateCollapsed(f"aggregated P={p_bar:.6g}, N={n_bar:.6g}; AUC undefined")
    return auc_from_rank_sum(global_sum, p_bar, n_bar)


# ---------------------------------------------------------------------------
# orchestration


@dataclass(frozen=True)
class ProtocolConfig:
    """One protocol setting.

    ``eps_total`` is the whole label budget: for threshold protocols it is
    spread over 4 * grid_size statistics; for rank-laplace it is split by
    ``alpha`` between the rank sum and the positive count (all of it goes to
    the rank sum when ``use_exact_pn``); for rank-rr it is the flip budget.

    ``noiseless``, ``use_exact_pn``, ``true_pi`` and ``debias=False`` are
    analysis switches, not private deployments.
    """

    protocol: Protocol
    eps_total: float = 1.0
    n_clients: int = 10
    partition: PartitionMode = PartitionMode.IID
    grid_size: int = 100
    alpha: float = 0.5
    sensitivity_mode: SensitivityMode = SensitivityMode.LOCAL_MAX_RANK
    delta: float = 1e-5
    noiseless: bool = False
    use_exact_pn: bool = False
    debias: bool = True
    true_pi: bool = False

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "partition", PartitionMode(self.partition))
        object.__setattr__(self, "sensitivity_mode", SensitivityMode(self.sensitivity_mode))
        if self.n_clients < 1:
            raise ValueError(f"n_clients must be >= 1, got {self.n_clients}")
        if self.noiseless:
            return
        if self.protocol is Protocol.RANK_RR:
            if not self.eps_total >= 0:
                raise ValueError(f"eps_total must be >= 0, got {self.eps_total}")
        elif not self.eps_total > 0:
            raise ValueError(f"eps_total must be > 0, got {self.eps_total}")
        if self.protocol.is_threshold and self.grid_size < 1:
            raise ValueError(f"grid_size must be >= 1, got {self.grid_size}")
        if self.protocol is Protocol.THRESHOLD_GAUSSIAN and not 0 < self.delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if self.protocol is Protocol.RANK_LAPLACE and not self.use_exact_pn:
            if not 0 < self.alpha < 1:
                raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")

    @property
    def grid(self) -> ThresholdGrid:
        return ThresholdGrid.uniform(self.grid_size)

    @property
    def eps_per_stat(self) -> float:
        return eps_per_stat_for(self.eps_total, self.grid_size)

    @property
    def rank_budgets(self) -> tuple[float, float | None]:
        if self.use_exact_pn:
            return self.eps_total, None
        return split_budget(self.eps_total, self.alpha)


def run_protocol(config: ProtocolConfig, dataset: Dataset, rng: SeededRng) -> float:
    """One trial: partition, client reports, server aggregate (and the flip
    correction for rank-rr).  A pure function of (config, dataset, seed)."""
    partition = make_partition(dataset, config.n_clients, config.partition, rng)
    proto = config.protocol

    if proto.is_threshold:
        mech = Mechanism.NONE if config.noiseless else (
            Mechanism.LAPLACE if proto is Protocol.THRESHOLD_LAPLACE else Mechanism.GAUSSIAN
        )
        eps_stat = 1.0 if config.noiseless else config.eps_per_stat
        reports = threshold_reports(
            dataset, partition, config.grid, eps_stat, mech, rng, config.delta
        )
        return server_threshold_aggregate(reports).auc

    ranks = dataset.ranks
    exact_pn = (dataset.p, dataset.n) if config.use_exact_pn else None

    if proto is Protocol.RANK_RR:
        if config.noiseless:
            flipped = dataset.labels
        else:
            flipped = flip_labels_once(dataset, config.eps_total, rng.seed)
        reports = rank_rr_reports(flipped, ranks, partition)
        noisy = server_rank_aggregate(reports, exact_pn)
        if config.noiseless or not config.debias:
            return noisy
        _, p_bar, n_bar = rank_totals(reports)
        pi = dataset.base_rate if config.true_pi else None
        try:
            return clean_auc_from_noisy(noisy, p_bar, n_bar, config.eps_total, pi)
        except ValueError as exc:
            raise TrialFailure(str(exc)) from exc

    if config.noiseless:
        s, p, size, _ = _kernels.client_rank_stats(
            ranks, dataset.labels, partition.client_ids, partition.n_clients
        )
        return server_rank_aggregate(RankReports(s, p, size - p), exact_pn)
    eps_sum, eps_p = config.rank_budgets
    reports = rank_laplace_reports(
        dataset.labels, ranks, partition, eps_sum, eps_p, config.sensitivity_mode, rng
    )
    return server_rank_aggregate(reports, exact_pn)
