import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from dpauc.mechanisms import (
    BudgetAccountant,
    Mechanism,
    NoiseSpec,
    RrSpec,
    SeededRng,
    gaussian_sample,
    gaussian_sigma,
    laplace_sample,
    rr_flip,
    split_budget,
    threshold_budget,
)


def lap(sens, eps):
    return NoiseSpec(Mechanism.LAPLACE, sens, eps)


class TestRng:
    def test_identical_seeds_identical_stream(self):
        a, b = SeededRng(42), SeededRng(42)
        np.testing.assert_array_equal(a.uniform(1000), b.uniform(1000))

    def test_uniform_open_interval_and_raw_mapping(self):
        # u = ((raw >> 11) + 0.5) / 2^53 on the PCG64 raw stream
        raw = np.random.PCG64(np.random.SeedSequence(9)).random_raw(5)
        expected = [((int(x) >> 11) + 0.5) / 2**53 for x in raw]
        np.testing.assert_array_equal(SeededRng(9).uniform(5), expected)

    def test_trial_seed_derivation(self):
        assert SeededRng.for_trial(10, 3).seed == 13
        assert SeededRng.for_trial(2**64 - 1, 1).seed == 0

    def test_spawn_is_independent_and_deterministic(self):
        r = SeededRng(5)
        a = r.spawn(1).uniform(4)
        np.testing.assert_array_equal(a, SeededRng(5).spawn(1).uniform(4))
        assert not np.array_equal(a, SeededRng(5).uniform(4))

    def test_permutation(self):
        p = SeededRng(3).permutation(50)
        assert sorted(p.tolist()) == list(range(50))


class TestNoiseSpec:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(mechanism="laplace", epsilon=0),
            dict(mechanism="laplace", sensitivity=0),
            dict(mechanism="laplace", delta=0.1),
            dict(mechanism="gaussian", delta=0),
            dict(mechanism="gaussian", delta=1.0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            NoiseSpec(**kwargs)

    def test_laplace_scale(self):
        spec = lap(1, 0.01)
        assert spec.scale == pytest.approx(100)
        assert 2 * spec.scale**2 == pytest.approx(20_000)

    def test_scale_depends_only_on_ratio(self):
        a = laplace_sample(lap(2, 1), SeededRng(8), (100,))
        b = laplace_sample(lap(1, 0.5), SeededRng(8), (100,))
        np.testing.assert_array_equal(a, b)

    def test_wrong_mechanism(self):
        with pytest.raises(ValueError):
            laplace_sample(NoiseSpec("gaussian", 1, 1, 0.1), SeededRng(0))
        with pytest.raises(ValueError):
            gaussian_sample(lap(1, 1), SeededRng(0))


class TestLaplace:
    def test_inverse_cdf_matches_scipy(self):
        u = SeededRng(77).uniform(1000)
        x = laplace_sample(lap(1, 0.25), SeededRng(77), (1000,))
        np.testing.assert_allclose(x, stats.laplace.ppf(u, scale=4.0), rtol=1e-12, atol=1e-12)

    def test_scalar_draw(self):
        assert isinstance(laplace_sample(lap(1, 1), SeededRng(1)), float)

    def test_moments_million_draws(self):
        x = laplace_sample(lap(1, 1), SeededRng(2024), (10**6,))
        assert abs(x.mean()) <= 0.01
        assert abs(x.var() / 2.0 - 1) <= 0.03

    def test_moment_bounds_general(self):
        b, n = 3.0, 200_000
        x = laplace_sample(lap(3, 1), SeededRng(11), (n,))
        assert abs(x.mean()) <= 4 * b * math.sqrt(2 / n)
        assert abs(x.var() / (2 * b * b) - 1) <= 0.05


class TestGaussian:
    def test_sigma_substitution(self):
        assert gaussian_sigma(1, 1, 0.25) == pytest.approx(math.sqrt(2 * math.log(5)))
        assert gaussian_sigma(1, 1, 0.25) == pytest.approx(1.794, abs=5e-4)

    def test_std_million_draws(self):
        spec = NoiseSpec(Mechanism.GAUSSIAN, 1, 1, 0.25)
        z = gaussian_sample(spec, SeededRng(31), (10**6,))
        assert abs(z.std() / spec.scale - 1) <= 0.03
        assert stats.kstest(z[:20000] / spec.scale, "norm").pvalue > 1e-3

    def test_delta_zero_is_error(self):
        with pytest.raises(ValueError):
            gaussian_sigma(1, 1, 0)

    def test_batch_equals_sequential(self):
        spec = NoiseSpec(Mechanism.GAUSSIAN, 1, 1, 0.1)
        rng = SeededRng(4)
        seq = [gaussian_sample(spec, rng) for _ in range(6)]
        np.testing.assert_allclose(gaussian_sample(spec, SeededRng(4), (6,)), seq)


class TestRandomizedResponse:
    def test_keep_prob_eps_zero(self):
        assert RrSpec(0).keep_prob == 0.5

    def test_keep_prob_large_eps(self):
        assert RrSpec(50).keep_prob == pytest.approx(1.0)
        flips = rr_flip(np.ones(10_000, dtype=np.int8), RrSpec(50), SeededRng(1))
        assert flips.sum() == 10_000

    def test_keep_rate_eps_one(self):
        out = rr_flip(np.ones(10**6, dtype=np.int8), RrSpec(1), SeededRng(99))
        assert abs(out.mean() - math.e / (1 + math.e)) <= 0.002

    def test_keep_rate_binomial_bound(self):
        n, spec = 200_000, RrSpec(0.7)
        out = rr_flip(np.zeros(n, dtype=np.int8), spec, SeededRng(5))
        q = spec.keep_prob
        assert abs((1 - out.mean()) - q) <= 4 * math.sqrt(q * (1 - q) / n)

    def test_scalar(self):
        assert rr_flip(1, RrSpec(50), SeededRng(0)) == 1

    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError):
            rr_flip(np.array([0, 2]), RrSpec(1), SeededRng(0))

    def test_negative_eps(self):
        with pytest.raises(ValueError):
            RrSpec(-1)


class TestBudget:
    def test_table_header_budgets(self):
        assert threshold_budget(100, 0.02) == 8.0
        assert threshold_budget(100, 0.0025) == 1.0

    def test_single_threshold(self):
        assert threshold_budget(1, 0.25) == 1.0

    def test_records_in_accountant(self):
        acc = BudgetAccountant()
        assert threshold_budget(100, 0.02, acc) == acc.total == 8.0
        assert len(acc.ledger) == 400

    @given(st.integers(1, 500), st.floats(1e-4, 10), st.integers(2, 5))
    def test_linearity(self, g, e, c):
        assert threshold_budget(g * c, e) == pytest.approx(c * threshold_budget(g, e))
        assert threshold_budget(g, e * c) == pytest.approx(c * threshold_budget(g, e))

    @given(st.lists(st.floats(1e-6, 100), min_size=1, max_size=50), st.randoms())
    def test_total_order_independent(self, eps, rnd):
        a, b = BudgetAccountant(), BudgetAccountant()
        for i, e in enumerate(eps):
            a.spend(str(i), e)
        shuffled = list(enumerate(eps))
        rnd.shuffle(shuffled)
        for i, e in shuffled:
            b.spend(str(i), e)
        assert a.total == b.total == math.fsum(eps)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            BudgetAccountant().spend("x", 0)
        with pytest.raises(ValueError):
            threshold_budget(0, 1)


class TestSplit:
    def test_even(self):
        assert split_budget(1, 0.5) == (0.5, 0.5)

    def test_uneven(self):
        s, p = split_budget(4, 0.9)
        assert s == pytest.approx(3.6) and p == pytest.approx(0.4)

    @given(st.floats(1e-3, 1e3), st.floats(0.001, 0.999))
    def test_conservation(self, eps, alpha):
        s, p = split_budget(eps, alpha)
        assert s + p == pytest.approx(eps, rel=1e-15)
        assert p == pytest.approx((1 - alpha) * eps, rel=1e-12)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValueError):
            split_budget(1, alpha)
