"""Closed-form variance predictors, the Monte Carlo harness that checks
them, a top-k label-inference attack and prediction-score perturbation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .data import gen_fixed_counts
from .federation import (
    Protocol,
    ProtocolConfig,
    SensitivityMode,
    TrialFailure,
    run_protocol,
)
from .mechanisms import NoiseSpec, Mechanism, SeededRng, laplace_sample
from .metrics import Dataset


class FormulaId(str, enum.Enum):
    LOCAL_LAPLACE = "local-laplace"
    GLOBAL_LAPLACE = "global-laplace"
    RR_NOISY = "rr-noisy"


@dataclass(frozen=True)
class VariancePrediction:
    variance: float
    formula_id: FormulaId

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def var_local_laplace(k: int, p: int, n: int, eps: float) -> VariancePrediction:
    """AUC variance with one sample per client, each client using its own
    rank as the rank-sum sensitivity, exact P and N:
    K(K-1)(2K-1) / (3 P^2 N^2 eps^2)."""
    if k < 2 or p < 1 or n < 1 or not eps > 0:
        raise ValueError("need K >= 2, P >= 1, N >= 1, eps > 0")
    v = k * (k - 1) * (2 * k - 1) / (3.0 * p**2 * n**2 * eps**2)
    return VariancePrediction(v, FormulaId.LOCAL_LAPLACE)


def var_global_laplace(k: int, m: int, p: int, n: int, eps: float) -> VariancePrediction:
    """AUC variance when every client uses sensitivity M-1, exact P and N:
    2K(M-1)^2 / (P^2 N^2 eps^2)."""
    if k < 1 or p < 1 or n < 1 or m != p + n or not eps > 0:
        raise ValueError("need K >= 1, M = P + N with P, N >= 1, eps > 0")
    v = 2.0 * k * (m - 1) ** 2 / (p**2 * n**2 * eps**2)
    return VariancePrediction(v, FormulaId.GLOBAL_LAPLACE)


def var_rr_noisy(m: int, p: int, n: int, eps: float) -> VariancePrediction:
    """Variance of the AUC on randomized-response labels before the flip
    correction, with exact P and N and tie-free ranks 0..M-1:
    r(1-r) * M(M-1)(2M-1)/6 / (P^2 N^2), r = 1/(1+e^eps)."""
    if m != p + n or m < 2 or p < 1 or n < 1 or not eps >= 0:
        raise ValueError("need M = P + N >= 2 with P, N >= 1 and eps >= 0")
    r = 1.0 / (1.0 + math.exp(eps))
    v = r * (1.0 - r) * (m * (m - 1) * (2 * m - 1) / 6.0) / (p**2 * n**2)
    return VariancePrediction(v, FormulaId.RR_NOISY)


@dataclass(frozen=True)
class ExperimentResult:
    trials: int
    estimates: np.ndarray = field(repr=False)
    failures: int
    mean: float
    std: float
    failure_messages: tuple[str, ...] = field(default=(), repr=False)


def summarize(estimates, failures: int = 0, messages=()) -> ExperimentResult:
    est = np.asarray(estimates, dtype=np.float64)
    if est.size == 0:
        raise TrialFailure(f"all {failures} trials failed")
    std = float(np.std(est, ddof=1)) if est.size > 1 else math.nan
    return ExperimentResult(est.size + failures, est, failures, float(est.mean()), std, tuple(messages))


def monte_carlo(
    config: ProtocolConfig, dataset: Dataset, trials: int, base_seed: int
) -> ExperimentResult:
    """Repeat :func:`run_protocol` with seeds ``base_seed + i``.

    Failed trials are excluded from mean/std and counted; if every trial
    fails, :class:`TrialFailure` is raised.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    estimates = []
    messages = []
    for i in range(trials):
        try:
            estimates.append(run_protocol(config, dataset, SeededRng.for_trial(base_seed, i)))
        except TrialFailure as exc:
            messages.append(f"trial {i}: {exc}")
    return summarize(estimates, len(messages), messages)


# ---------------------------------------------------------------------------
# Monte Carlo checks of the closed forms, each under its stated assumptions


def empirical_std_local_laplace(k, p, n, eps, trials, seed) -> float:
    """One sample per client (K = P + N), LocalMaxRank sensitivity, noise
    only on the rank sum.  The client holding rank 0 is clamped to
    sensitivity 1; its extra variance 2/eps^2 (outside the formula's index
    range 1..K-1) is subtracted before comparing."""
    if k != p + n:
        raise ValueError("one sample per client requires K = P + N")
    data = gen_fixed_counts(p, n, SeededRng(seed).spawn(7))
    cfg = ProtocolConfig(
        Protocol.RANK_LAPLACE, eps_total=eps, n_clients=k,
        sensitivity_mode=SensitivityMode.LOCAL_MAX_RANK, use_exact_pn=True,
    )
    res = monte_carlo(cfg, data, trials, seed)
    ranks = data.ranks
    clamp_extra = 2.0 * np.sum(np.maximum(ranks, 1.0) ** 2 - ranks**2) / eps**2
    var = res.std**2 - clamp_extra / (p**2 * n**2)
    return math.sqrt(max(var, 0.0))


def empirical_std_global_laplace(k, m, p, n, eps, trials, seed) -> float:
    data = gen_fixed_counts(p, n, SeededRng(seed).spawn(7))
    if data.m != m:
        raise ValueError("M must equal P + N")
    cfg = ProtocolConfig(
        Protocol.RANK_LAPLACE, eps_total=eps, n_clients=k,
        sensitivity_mode=SensitivityMode.GLOBAL_M_MINUS_1, use_exact_pn=True,
    )
    return monte_carlo(cfg, data, trials, seed).std


def empirical_std_rr_noisy(m, p, n, eps, trials, seed, n_clients: int = 10) -> float:
    data = gen_fixed_counts(p, n, SeededRng(seed).spawn(7))
    if data.m != m:
        raise ValueError("M must equal P + N")
    cfg = ProtocolConfig(
        Protocol.RANK_RR, eps_total=eps, n_clients=n_clients,
        use_exact_pn=True, debias=False,
    )
    return monte_carlo(cfg, data, trials, seed).std


# ---------------------------------------------------------------------------
# label leakage from exposed scores


@dataclass(frozen=True)
class AttackResult:
    k: int
    true_positives_in_topk: int
    precision: float
    recall: float


def topk_attack(dataset: Dataset, k: int) -> AttackResult:
    """Guess the k highest-scored samples as positives.  Ties at the cut
    are broken by input order."""
    if not 1 <= k <= dataset.m:
        raise ValueError(f"k must be in [1, M={dataset.m}], got {k}")
    top = np.argsort(-dataset.scores, kind="stable")[:k]
    hits = int(dataset.labels[top].sum(dtype=np.int64))
    recall = hits / dataset.p if dataset.p else math.nan
    return AttackResult(k, hits, hits / k, recall)


def perturb_scores(dataset: Dataset, eps: float, rng: SeededRng) -> Dataset:
    """Add Laplace(1/eps) noise to every score (sensitivity 1 for a sigmoid
    output).  Noisy scores are left unclamped; labels are unchanged."""
    spec = NoiseSpec(Mechanism.LAPLACE, 1.0, eps)
    noisy = dataset.scores + laplace_sample(spec, rng, (dataset.m,))
    return Dataset(noisy, dataset.labels, strict=False)


@dataclass(frozen=True, eq=False)
class ScoreDensity:
    edges: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    positive_empty: bool
    negative_empty: bool


def score_density(dataset: Dataset, bins: int) -> ScoreDensity:
    """Per-class histograms over [0, 1] normalised to sum to 1; an empty
    class gives an all-zero histogram and sets its ``*_empty`` flag."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    edges = np.linspace(0.0, 1.0, bins + 1)

    def hist(scores):
        h, _ = np.histogram(np.clip(scores, 0.0, 1.0), bins=edges)
        h = h.astype(np.float64)
        return (h / h.sum(), False) if h.sum() else (h, True)

    pos, pos_empty = hist(dataset.scores[dataset.labels == 1])
    neg, neg_empty = hist(dataset.scores[dataset.labels == 0])
    return ScoreDensity(edges, pos, neg, pos_empty, neg_empty)


__all__ = [
    "AttackResult",
    "ExperimentResult",
    "FormulaId",
    "ScoreDensity",
    "VariancePrediction",
    "empirical_std_global_laplace",
    "empirical_std_local_laplace",
    "empirical_std_rr_noisy",
    "monte_carlo",
    "perturb_scores",
    "score_density",
    "summarize",
    "topk_attack",
    "var_global_laplace",
    "var_local_laplace",
    "var_rr_noisy",
]
