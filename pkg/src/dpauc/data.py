"""Synthetic score/label datasets and the CSV interchange format.

CSV schema: two comma-separated columns ``score,label``, UTF-8, one sample
per line.  A header row is optional and is recognised by a non-numeric
first field.  Scores are written with 17 significant digits so a
save/load round trip is lossless.
"""

from __future__ import annotations

import csv
import enum
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .mechanisms import SeededRng
from .metrics import Dataset


class ScoreFamily(str, enum.Enum):
    BETA_PAIR = "beta-pair"
    LOGIT_GAUSSIAN = "logit-gaussian"


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic dataset.

    ``separation`` moves the two class-conditional score distributions
    apart; 0 makes the classes exchangeable.  For ``LOGIT_GAUSSIAN`` the
    latent class means are ``-separation/2`` and ``+separation/2`` with unit
    variance, so the population AUC is ``Phi(separation / sqrt(2))``.  For
    ``BETA_PAIR`` positives follow ``Beta(2 + separation, 2)`` and negatives
    ``Beta(2, 2 + separation)``.
    """

    m: int
    base_rate: float = 0.2
    separation: float = 1.0
    family: ScoreFamily = ScoreFamily.LOGIT_GAUSSIAN

    def __post_init__(self):
        object.__setattr__(self, "family", ScoreFamily(self.family))
        if self.m < 2:
            raise ValueError(f"m must be >= 2, got {self.m}")
        if not 0 < self.base_rate < 1:
            raise ValueError(f"base_rate must be in (0, 1), got {self.base_rate}")
        if not self.separation >= 0:
            raise ValueError(f"separation must be >= 0, got {self.separation}")
        if self.base_rate * self.m < 1 or (1 - self.base_rate) * self.m < 1:
            raise ValueError("expected positives and negatives must both be >= 1")


# Suite reference dataset: population AUC Phi(1.19/sqrt 2) ~ 0.80.
REFERENCE_SPEC = SyntheticSpec(m=10_000, base_rate=0.2, separation=1.19)
REFERENCE_SEED = 20240611


def _class_scores(n: int, positive: bool, spec: SyntheticSpec, gen: np.random.Generator):
    if spec.family is ScoreFamily.LOGIT_GAUSSIAN:
        mu = spec.separation / 2.0 if positive else -spec.separation / 2.0
        return expit(gen.normal(mu, 1.0, size=n))
    a, b = (2.0 + spec.separation, 2.0) if positive else (2.0, 2.0 + spec.separation)
    return gen.beta(a, b, size=n)


def _scores_for(labels: np.ndarray, spec: SyntheticSpec, gen: np.random.Generator):
    scores = np.empty(labels.size)
    pos = labels == 1
    scores[pos] = _class_scores(int(pos.sum()), True, spec, gen)
    scores[~pos] = _class_scores(int((~pos).sum()), False, spec, gen)
    return scores


def gen_synthetic(spec: SyntheticSpec, rng: SeededRng) -> Dataset:
    """Bernoulli(base_rate) labels with class-conditional scores.

    A draw without both classes is resampled once before giving up.
    """
    gen = rng.generator
    for _ in range(2):
        labels = (gen.random(spec.m) < spec.base_rate).astype(np.int8)
        if 0 < labels.sum() < spec.m:
            return Dataset(_scores_for(labels, spec, gen), labels)
    raise ValueError(f"generated dataset lacks a class twice in a row ({spec})")


def gen_fixed_counts(
    n_pos: int,
    n_neg: int,
    rng: SeededRng,
    separation: float = 1.0,
    family: ScoreFamily = ScoreFamily.LOGIT_GAUSSIAN,
) -> Dataset:
    """Dataset with exactly ``n_pos`` positives and ``n_neg`` negatives in
    shuffled order.  Used where a closed form needs known P and N."""
    if n_pos < 1 or n_neg < 1:
        raise ValueError("need at least one sample of each class")
    spec = SyntheticSpec(n_pos + n_neg, n_pos / (n_pos + n_neg), separation, family)
    labels = np.zeros(spec.m, dtype=np.int8)
    labels[:n_pos] = 1
    labels = labels[rng.generator.permutation(spec.m)]
    return Dataset(_scores_for(labels, spec, rng.generator), labels)


def reference_dataset() -> Dataset:
    return gen_synthetic(REFERENCE_SPEC, SeededRng(REFERENCE_SEED))


class CsvFormatError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path: str | os.PathLike) -> Dataset:
    scores: list[float] = []
    labels: list[int] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and not _is_number(row[0].strip()):
                continue
            if len(row) != 2:
                raise CsvFormatError(path, lineno, f"expected 2 fields, got {len(row)}")
            try:
                score = float(row[0])
                label_f = float(row[1])
            except ValueError:
                raise CsvFormatError(path, lineno, f"non-numeric field in {row!r}") from None
            if not (math.isfinite(score) and 0.0 <= score <= 1.0):
                raise CsvFormatError(path, lineno, f"score {row[0]!r} outside [0, 1]")
            if label_f not in (0.0, 1.0):
                raise CsvFormatError(path, lineno, f"label {row[1]!r} not in {{0, 1}}")
            scores.append(score)
            labels.append(int(label_f))
    return Dataset(np.array(scores, dtype=np.float64), np.array(labels, dtype=np.int8))


def save_csv(dataset: Dataset, path: str | os.PathLike, header: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write("score,label\n")
        for s, y in zip(dataset.scores.tolist(), dataset.labels.tolist()):
            fh.write(f"{s:.17g},{y}\n")
