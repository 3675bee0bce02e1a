"""Correcting an AUC computed on randomized-response labels.

With class-conditional flip rates (rho_plus, rho_minus) and clean base
rate pi, the AUC measured on flipped labels is an affine function of the
clean AUC:

    AUC_noisy = (1 - alpha - beta) * AUC_clean + (alpha + beta) / 2

where alpha is the share of noisy positives that are truly negative and
beta the share of noisy negatives that are truly positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

PI_CLAMP = 1e-6


@dataclass(frozen=True)
class FlipRates:
    rho_plus: float
    rho_minus: float

    def __post_init__(self):
        for name in ("rho_plus", "rho_minus"):
            v = getattr(self, name)
            if not 0.0 <= v < 0.5:
                raise ValueError(f"{name} must be in [0, 0.5), got {v}")

    @classmethod
    def symmetric(cls, epsilon: float) -> FlipRates:
        """Flip rates of binary randomized response with budget epsilon."""
        if math.isinf(epsilon):
            return cls(0.0, 0.0)
        r = 1.0 / (1.0 + math.exp(epsilon))
        return cls(r, r)


@dataclass(frozen=True)
class BaseRateEstimate:
    p_est: float
    n_est: float
    pi_est: float
    clamped: bool = False


def estimate_base_rate(p_bar: float, n_bar: float, rates: FlipRates) -> BaseRateEstimate:
    """Unbiased positive/negative counts of the clean data from the
    observed (flipped) counts, and the implied base rate.

    ``pi_est`` is clamped to ``[1e-6, 1 - 1e-6]``; ``clamped`` reports
    whether that fired.
    """
    total = p_bar + n_bar
    if not total > 0:
        raise ValueError(f"need p_bar + n_bar > 0, got {total}")
    denom = 1.0 - rates.rho_plus - rates.rho_minus
    if not denom > 0:
        raise ValueError("flip rates must satisfy rho_plus + rho_minus < 1")
    p_est = (p_bar * (1.0 - rates.rho_minus) - n_bar * rates.rho_minus) / denom
    n_est = total - p_est
    pi = p_est / total
    pi_c = min(max(pi, PI_CLAMP), 1.0 - PI_CLAMP)
    return BaseRateEstimate(p_est, n_est, pi_c, clamped=pi_c != pi)


def alpha_beta(pi: float, rates: FlipRates) -> tuple[float, float]:
    if not 0.0 < pi < 1.0:
        raise ValueError(f"pi must be in (0, 1), got {pi}")
    rp, rm = rates.rho_plus, rates.rho_minus
    den_a = pi * (1.0 - rp) + (1.0 - pi) * rm
    den_b = pi * rp + (1.0 - pi) * (1.0 - rm)
    assert den_a > 0 and den_b > 0, "impossible under pi in (0,1), rho < 0.5"
    return (1.0 - pi) * rm / den_a, pi * rp / den_b


def debias_auc(noisy_auc: float, alpha: float, beta: float) -> float:
    """Invert the affine noise relation.  The result is not clamped to
    [0, 1]: clipping would bias Monte Carlo means."""
    scale = 1.0 - alpha - beta
    if not scale > 0:
        raise ValueError(f"need alpha + beta < 1, got alpha={alpha}, beta={beta}")
    return (noisy_auc - (alpha + beta) / 2.0) / scale


def clean_auc_from_noisy(
    noisy_auc: float,
    p_bar: float,
    n_bar: float,
    epsilon: float,
    pi: float | None = None,
) -> float:
    """Server-side correction for symmetric randomized response.

    ``pi`` defaults to the estimate from the observed counts; passing the
    true base rate is an analysis-only shortcut.
    """
    rates = FlipRates.symmetric(epsilon)
    if pi is None:
        pi = estimate_base_rate(p_bar, n_bar, rates).pi_est
    a, b = alpha_beta(pi, rates)
    return debias_auc(noisy_auc, a, b)
