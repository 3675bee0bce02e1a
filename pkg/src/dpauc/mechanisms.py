"""Differential-privacy primitives: seeded RNG, noise samplers, randomized
response and privacy-budget bookkeeping.

All randomness is drawn from :class:`SeededRng`, a thin wrapper around
numpy's PCG64 bit generator.  Continuous noise is produced from the raw
64-bit stream by inverse-CDF (Laplace) or Box-Muller (Gaussian) so the
mapping from seed to noise does not depend on numpy's distribution code.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

_TWO_POW_64 = 1 << 64
_INV_2_53 = 1.0 / 9007199254740992.0


class Mechanism(str, enum.Enum):
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"
    NONE = "none"


class SeededRng:
    """Deterministic random stream: PCG64 seeded with a 64-bit unsigned int.

    A single instance must not be shared between concurrent tasks; derive
    independent streams with :meth:`for_trial` or :meth:`spawn`.
    """

    def __init__(self, seed: int, _seed_seq: np.random.SeedSequence | None = None):
        self.seed = int(seed) % _TWO_POW_64
        seq = _seed_seq if _seed_seq is not None else np.random.SeedSequence(self.seed)
        self._bitgen = np.random.PCG64(seq)
        # Used only for data generation (beta/normal score families).
        self.generator = np.random.Generator(self._bitgen)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed})"

    @classmethod
    def for_trial(cls, base_seed: int, trial_index: int) -> SeededRng:
        return cls((int(base_seed) + int(trial_index)) % _TWO_POW_64)

    def spawn(self, key: int) -> SeededRng:
        """Independent child stream identified by ``key``; does not advance self."""
        seq = np.random.SeedSequence(self.seed, spawn_key=(int(key),))
        return SeededRng(self.seed, _seed_seq=seq)

    def uniform(self, size=None):
        """Uniform draws on the open interval (0, 1), 53 bits each."""
        n = 1 if size is None else int(np.prod(size))
        raw = self._bitgen.random_raw(n)
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        # argsort of uniforms keeps the permutation on the raw stream
        return np.argsort(self.uniform(n), kind="stable")


@dataclass(frozen=True)
class NoiseSpec:
    mechanism: Mechanism
    sensitivity: float = 1.0
    epsilon: float = 1.0
    delta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mechanism", Mechanism(self.mechanism))
        if self.mechanism is Mechanism.NONE:
            return
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.sensitivity > 0:
            raise ValueError(f"sensitivity must be > 0, got {self.sensitivity}")
        if self.mechanism is Mechanism.LAPLACE and self.delta != 0:
            raise ValueError("the Laplace mechanism takes delta = 0")
        if self.mechanism is Mechanism.GAUSSIAN and not 0 < self.delta < 1:
            raise ValueError(f"Gaussian mechanism needs delta in (0, 1), got {self.delta}")

    @property
    def scale(self) -> float:
        """Laplace b, Gaussian sigma, or 0 for no noise."""
        if self.mechanism is Mechanism.LAPLACE:
            return self.sensitivity / self.epsilon
        if self.mechanism is Mechanism.GAUSSIAN:
            return gaussian_sigma(self.sensitivity, self.epsilon, self.delta)
        return 0.0

    def sample(self, rng: SeededRng, size=None):
        if self.mechanism is Mechanism.LAPLACE:
            return laplace_sample(self, rng, size)
        if self.mechanism is Mechanism.GAUSSIAN:
            return gaussian_sample(self, rng, size)
        return 0.0 if size is None else np.zeros(size)


def laplace_from_uniform(u, scale):
    """Inverse CDF of Laplace(0, scale) applied to u in (0, 1)."""
    v = np.asarray(u, dtype=np.float64) - 0.5
    return -scale * np.sign(v) * np.log1p(-2.0 * np.abs(v))


def laplace_sample(spec: NoiseSpec, rng: SeededRng, size=None):
    """Laplace(0, sensitivity/epsilon) draws, one uniform per draw."""
    if spec.mechanism is not Mechanism.LAPLACE:
        raise ValueError(f"expected a Laplace NoiseSpec, got {spec.mechanism.value}")
    x = laplace_from_uniform(rng.uniform(size), spec.scale)
    return float(x) if size is None else x


def gaussian_sigma(sensitivity: float, epsilon: float, delta: float) -> float:
    """Classical calibration sigma = sensitivity * sqrt(2 ln(1.25/delta)) / epsilon."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if not epsilon > 0 or not sensitivity > 0:
        raise ValueError("epsilon and sensitivity must be > 0")
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def gaussian_sample(spec: NoiseSpec, rng: SeededRng, size=None):
    """Normal(0, sigma) draws via Box-Muller; each draw consumes two
    consecutive uniforms, so batched and one-at-a-time calls agree."""
    if spec.mechanism is not Mechanism.GAUSSIAN:
        raise ValueError(f"expected a Gaussian NoiseSpec, got {spec.mechanism.value}")
    n = 1 if size is None else int(np.prod(size))
    u = rng.uniform(2 * n).reshape(n, 2)
    z = np.sqrt(-2.0 * np.log(u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
    z *= spec.scale
    return float(z[0]) if size is None else z.reshape(size)


@dataclass(frozen=True)
class RrSpec:
    epsilon: float

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"randomized response needs epsilon >= 0, got {self.epsilon}")

    @property
    def keep_prob(self) -> float:
        # e^eps / (1 + e^eps), written to stay finite for large eps
        return 1.0 / (1.0 + math.exp(-self.epsilon))

    @property
    def flip_prob(self) -> float:
        return 1.0 / (1.0 + math.exp(self.epsilon))


def rr_flip(label, spec: RrSpec, rng: SeededRng):
    """Randomized response on a label (or an array of labels).

    Each label is kept with probability ``spec.keep_prob`` and complemented
    otherwise, one uniform per label.
    """
    y = np.asarray(label)
    if y.size and not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    keep = rng.uniform(y.shape if y.ndim else None) < spec.keep_prob
    out = np.where(keep, y, 1 - y).astype(np.int8)
    return int(out) if y.ndim == 0 else out


@dataclass
class BudgetAccountant:
    """Sequential-composition ledger; the total is the exact (fsum) sum."""

    ledger: list[tuple[str, float]] = field(default_factory=list)

    def spend(self, label: str, epsilon: float) -> None:
        if not epsilon > 0:
            raise ValueError(f"budget entries must be > 0, got {epsilon} for {label!r}")
        self.ledger.append((label, float(epsilon)))

    @property
    def total(self) -> float:
        return math.fsum(eps for _, eps in self.ledger)


_STATS = ("tp", "fp", "tn", "fn")


def threshold_budget(
    grid_size: int, eps_per_stat: float, accountant: BudgetAccountant | None = None
) -> float:
    """Total epsilon of the per-threshold protocol: four statistics per
    threshold, each released with ``eps_per_stat``."""
    if grid_size < 1:
        raise ValueError(f"grid_size must be >= 1, got {grid_size}")
    if not eps_per_stat > 0:
        raise ValueError(f"eps_per_stat must be > 0, got {eps_per_stat}")
    if accountant is not None:
        for j in range(grid_size):
            for stat in _STATS:
                accountant.spend(f"{stat}@{j}", eps_per_stat)
    return grid_size * 4 * eps_per_stat


def eps_per_stat_for(total_eps: float, grid_size: int) -> float:
    """Inverse of :func:`threshold_budget`."""
    if not total_eps > 0 or grid_size < 1:
        raise ValueError("need total_eps > 0 and grid_size >= 1")
    return total_eps / (4 * grid_size)


def split_budget(total_eps: float, alpha: float) -> tuple[float, float]:
    """Split epsilon into (local-sum share, local-positive-count share)."""
    if not total_eps > 0:
        raise ValueError(f"total_eps must be > 0, got {total_eps}")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    eps_sum = alpha * total_eps
    return eps_sum, total_eps - eps_sum
