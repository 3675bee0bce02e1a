import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from dpauc.federation import (
    EstimateCollapsed,
    Partition,
    PartitionMode,
    Protocol,
    ProtocolConfig,
    RankReport,
    SensitivityMode,
    client_rank_laplace_report,
    client_rank_rr_report,
    client_threshold_report,
    flip_labels_once,
    partition_iid,
    partition_noniid,
    rank_laplace_reports,
    rank_rr_reports,
    run_protocol,
    server_rank_aggregate,
    server_threshold_aggregate,
    threshold_reports,
)
from dpauc.mechanisms import Mechanism, SeededRng
from dpauc.metrics import Dataset, ThresholdGrid, auc_rank, auc_sweep, confusion_at

from conftest import random_dataset


def tiny(m):
    return Dataset(np.linspace(0, 1, m), np.arange(m) % 2)


class TestPartition:
    @pytest.mark.parametrize("m, k, sizes", [(10, 2, [5, 5]), (10, 3, [4, 3, 3]), (7, 7, [1] * 7)])
    def test_near_equal_sizes(self, m, k, sizes):
        p = partition_iid(tiny(m), k, SeededRng(0))
        assert sorted(p.sizes().tolist(), reverse=True) == sizes

    def test_large_scale_sizes(self):
        m = 458_407
        ids = Partition(np.repeat(np.arange(1000), [459] * 407 + [458] * 593), 1000)
        assert ids.client_ids.size == m
        d = Dataset(np.zeros(m), np.zeros(m, dtype=np.int8))
        sizes = partition_iid(d, 1000, SeededRng(1)).sizes()
        assert set(sizes.tolist()) == {458, 459}
        np.testing.assert_array_equal(np.sort(sizes), np.sort(ids.sizes()))

    @pytest.mark.parametrize("fn", [lambda d, k: partition_iid(d, k, SeededRng(0)), partition_noniid])
    def test_too_many_clients(self, fn):
        with pytest.raises(ValueError):
            fn(tiny(3), 4)

    def test_noniid_example(self):
        d = Dataset([0.9, 0.1, 0.8, 0.2], [1, 0, 1, 0])
        p = partition_noniid(d, 2)
        assert sorted(d.scores[p.indices(0)]) == [0.1, 0.2]
        assert sorted(d.scores[p.indices(1)]) == [0.8, 0.9]

    def test_noniid_matches_full_sort(self, np_rng):
        d = random_dataset(np_rng, 1000)
        p = partition_noniid(d, 10)
        expected = np.sort(d.scores).reshape(10, 100)
        for k in range(10):
            np.testing.assert_array_equal(np.sort(d.scores[p.indices(k)]), expected[k])

    @settings(max_examples=50)
    @given(st.integers(1, 300), st.data())
    def test_invariants(self, m, data):
        k = data.draw(st.integers(1, m))
        seed = data.draw(st.integers(0, 2**32))
        rng = np.random.default_rng(seed)
        d = random_dataset(rng, max(m, 2), ties=True)
        m = d.m
        k = min(k, m)
        for p in (partition_iid(d, k, SeededRng(seed)), partition_noniid(d, k)):
            cover = np.concatenate(p.assignments)
            assert np.array_equal(np.sort(cover), np.arange(m))
            assert p.sizes().max() - p.sizes().min() <= 1
        p = partition_noniid(d, k)
        for a, b in zip(p.assignments, p.assignments[1:]):
            if a.size and b.size:
                assert d.scores[a].max() <= d.scores[b].min()

    def test_iid_is_seeded(self):
        d = tiny(50)
        a = partition_iid(d, 5, SeededRng(3)).client_ids
        np.testing.assert_array_equal(a, partition_iid(d, 5, SeededRng(3)).client_ids)
        assert not np.array_equal(a, partition_iid(d, 5, SeededRng(4)).client_ids)


class TestThresholdProtocol:
    def test_noise_disabled_equals_exact_counts(self, np_rng):
        d = random_dataset(np_rng, 40)
        g = ThresholdGrid.uniform(5)
        r = client_threshold_report(d.scores, d.labels, g, 1.0, Mechanism.NONE, SeededRng(0))
        for j, t in enumerate(g.thresholds):
            c = confusion_at(d, t)
            np.testing.assert_array_equal(r.counts[j], [c.tp, c.fp, c.tn, c.fn])

    def test_empty_client_reports_noise(self):
        g = ThresholdGrid.uniform(3)
        r = client_threshold_report([], [], g, 0.5, Mechanism.LAPLACE, SeededRng(2))
        assert r.counts.shape == (3, 4)
        assert np.all(r.counts != 0)

    def test_seeded_replay(self):
        # independent oracle: raw PCG64 stream -> open uniforms -> scipy inverse cdf
        d = Dataset([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        g = ThresholdGrid([0.3, 0.6])
        eps = 0.5
        r = client_threshold_report(d.scores, d.labels, g, eps, Mechanism.LAPLACE, SeededRng(123))
        raw = np.random.PCG64(np.random.SeedSequence(123)).random_raw(8)
        u = np.array([((int(x) >> 11) + 0.5) / 2**53 for x in raw])
        noise = stats.laplace.ppf(u, scale=1 / eps).reshape(2, 4)
        exact = [[c.tp, c.fp, c.tn, c.fn] for c in (confusion_at(d, t) for t in g.thresholds)]
        np.testing.assert_allclose(r.counts, np.array(exact) + noise, rtol=0, atol=1e-12)

    def test_batch_matches_per_client_stream(self, np_rng):
        d = random_dataset(np_rng, 300)
        part = partition_iid(d, 7, SeededRng(5))
        g = ThresholdGrid.uniform(10)
        batch = threshold_reports(d, part, g, 0.1, Mechanism.LAPLACE, SeededRng(9))
        rng = SeededRng(9)
        for k in range(7):
            idx = part.indices(k)
            one = client_threshold_report(d.scores[idx], d.labels[idx], g, 0.1, Mechanism.LAPLACE, rng, k)
            np.testing.assert_allclose(batch[k].counts, one.counts, atol=1e-9)

    def test_grid_mismatch(self):
        a = client_threshold_report([0.5], [1], ThresholdGrid.uniform(2), 1, Mechanism.NONE, SeededRng(0))
        b = client_threshold_report([0.5], [0], ThresholdGrid.uniform(3), 1, Mechanism.NONE, SeededRng(0))
        with pytest.raises(ValueError):
            server_threshold_aggregate([a, b])
        with pytest.raises(ValueError):
            server_threshold_aggregate([a], ThresholdGrid.uniform(3))

    def test_noise_free_aggregate_near_rank_auc(self, ref_data):
        g = ThresholdGrid.uniform(1000)
        part = partition_iid(ref_data, 10, SeededRng(1))
        agg = server_threshold_aggregate(threshold_reports(ref_data, part, g, 1, Mechanism.NONE, SeededRng(0)))
        assert abs(agg.auc - auc_rank(ref_data)) <= 0.005
        assert agg.dropped_points == 0

    def test_single_client_equals_central_sweep(self, ref_data):
        g = ThresholdGrid.uniform(100)
        r = client_threshold_report(ref_data.scores, ref_data.labels, g, 1, Mechanism.NONE, SeededRng(0))
        assert server_threshold_aggregate([r]).auc == auc_sweep(ref_data, g)

    def test_noisy_report_collapses_gracefully(self):
        # tiny eps on a tiny dataset: many points undefined, but AUC stays in [0, 1]
        d = tiny(10)
        part = partition_iid(d, 2, SeededRng(0))
        agg = server_threshold_aggregate(
            threshold_reports(d, part, ThresholdGrid.uniform(50), 1e-3, Mechanism.LAPLACE, SeededRng(1))
        )
        assert 0 <= agg.auc <= 1
        assert agg.dropped_points > 0


class TestRankProtocols:
    def test_rr_all_zero_labels(self):
        r = client_rank_rr_report([0, 0, 0], [4.0, 1.0, 7.0])
        assert (r.local_sum, r.local_p, r.local_n) == (0, 0, 3)

    def test_rr_no_flips_equals_rank_auc(self, ref_data):
        flipped = flip_labels_once(ref_data, 50.0, 1)
        np.testing.assert_array_equal(flipped, ref_data.labels)
        r = client_rank_rr_report(flipped, ref_data.ranks)
        assert server_rank_aggregate([r]) == auc_rank(ref_data)

    def test_rr_positive_recount(self, ref_data):
        flipped = flip_labels_once(ref_data, 1.0, 77)
        part = partition_iid(ref_data, 10, SeededRng(77))
        reps = rank_rr_reports(flipped, ref_data.ranks, part)
        assert reps.local_p.sum() == int(np.count_nonzero(np.asarray(flipped) == 1))
        assert reps.local_p.sum() + reps.local_n.sum() == ref_data.m

    def test_flip_cache_reuses_labels(self, ref_data):
        a = flip_labels_once(ref_data, 1.0, 5)
        assert flip_labels_once(ref_data, 1.0, 5) is a
        assert not np.array_equal(a, flip_labels_once(ref_data, 1.0, 6))
        assert not a.flags.writeable

    def test_min_rank_client_sensitivity_clamped(self):
        # a client whose only sample has rank 0: scale 1/eps_sum, not 0
        rng = SeededRng(8)
        u = SeededRng(8).uniform(1)
        r = client_rank_laplace_report([0], [0.0], 2.0, None, SensitivityMode.LOCAL_MAX_RANK, rng)
        assert r.local_sum == pytest.approx(stats.laplace.ppf(u[0], scale=0.5))

    def test_global_sensitivity_scale(self):
        labels = np.ones(100, dtype=np.int8)
        ranks = np.arange(100, dtype=float)
        part = Partition(np.arange(100) % 4, 4)
        reps = rank_laplace_reports(labels, ranks, part, 3.0, None, SensitivityMode.GLOBAL_M_MINUS_1, SeededRng(2))
        u = SeededRng(2).uniform(4)
        exact = np.array([ranks[part.indices(k)].sum() for k in range(4)])
        np.testing.assert_allclose(reps.local_sum - exact, stats.laplace.ppf(u, scale=99 / 3.0), atol=1e-9)

    def test_global_mode_needs_total(self):
        with pytest.raises(ValueError):
            client_rank_laplace_report([1], [3.0], 1, None, SensitivityMode.GLOBAL_M_MINUS_1, SeededRng(0))

    def test_laplace_report_local_n_derived(self):
        r = client_rank_laplace_report([1, 0, 1], [0.0, 1.0, 2.0], 1.0, 1.0, SensitivityMode.LOCAL_MAX_RANK, SeededRng(4))
        assert r.local_p + r.local_n == pytest.approx(3.0)
        assert r.local_p != 2.0

    def test_batch_matches_per_client_stream(self, np_rng):
        d = random_dataset(np_rng, 200)
        part = partition_iid(d, 6, SeededRng(1))
        batch = rank_laplace_reports(d.labels, d.ranks, part, 0.7, 0.3, SensitivityMode.LOCAL_MAX_RANK, SeededRng(3))
        rng = SeededRng(3)
        for k, rep in enumerate(batch):
            idx = part.indices(k)
            one = client_rank_laplace_report(
                d.labels[idx], d.ranks[idx], 0.7, 0.3, SensitivityMode.LOCAL_MAX_RANK, rng, client_id=k
            )
            assert rep.local_sum == pytest.approx(one.local_sum)
            assert rep.local_p == pytest.approx(one.local_p)
            assert rep.local_n == pytest.approx(one.local_n)

    def test_collapsed_estimate(self):
        reps = [RankReport(0, 3.0, -2.0, 5.0), RankReport(1, 1.0, 0.5, 1.0)]
        with pytest.raises(EstimateCollapsed):
            server_rank_aggregate(reps)

    def test_empty_aggregate(self):
        with pytest.raises(ValueError):
            server_rank_aggregate([])

    def test_two_halves_equal_one_client(self, np_rng):
        d = random_dataset(np_rng, 101, ties=True)
        whole = client_rank_rr_report(d.labels, d.ranks)
        halves = [client_rank_rr_report(d.labels[s], d.ranks[s]) for s in (slice(0, 50), slice(50, None))]
        assert server_rank_aggregate(halves) == pytest.approx(server_rank_aggregate([whole]), abs=1e-15)
        assert server_rank_aggregate([whole]) == pytest.approx(auc_rank(d), abs=1e-15)


ALL_PROTOCOLS = list(Protocol)


class TestRunProtocol:
    @pytest.mark.parametrize("protocol", ALL_PROTOCOLS)
    @pytest.mark.parametrize("mode", list(PartitionMode))
    def test_zero_noise_equivalence(self, protocol, mode, ref_data):
        cfg = ProtocolConfig(protocol, n_clients=10, partition=mode, grid_size=1000, noiseless=True)
        est = run_protocol(cfg, ref_data, SeededRng(0))
        tol = 0.005 if protocol.is_threshold else 1e-12
        assert abs(est - auc_rank(ref_data)) <= tol

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 40), st.integers(0, 1000))
    def test_regrouping_invariance(self, k, seed):
        d = random_dataset(np.random.default_rng(seed), 80, ties=True)
        results = {
            run_protocol(ProtocolConfig(p, n_clients=k, noiseless=True), d, SeededRng(seed + j))
            for j in range(3)
            for p in (Protocol.RANK_RR, Protocol.RANK_LAPLACE)
        }
        assert max(results) - min(results) <= 1e-12

    @pytest.mark.parametrize("protocol", ALL_PROTOCOLS)
    def test_pure_function_of_seed(self, protocol, ref_data):
        cfg = ProtocolConfig(protocol, eps_total=2.0)
        assert run_protocol(cfg, ref_data, SeededRng(17)) == run_protocol(cfg, ref_data, SeededRng(17))

    def test_rank_rr_large_eps_exact(self, ref_data):
        est = run_protocol(ProtocolConfig(Protocol.RANK_RR, eps_total=50.0), ref_data, SeededRng(3))
        assert est == pytest.approx(auc_rank(ref_data), abs=1e-12)

    def test_rank_rr_debias_mean(self, ref_data):
        cfg = ProtocolConfig(Protocol.RANK_RR, eps_total=1.0)
        est = [run_protocol(cfg, ref_data, SeededRng.for_trial(100, i)) for i in range(200)]
        assert abs(np.mean(est) - auc_rank(ref_data)) <= 0.01

    def test_rank_rr_eps_zero_is_trial_failure(self, ref_data):
        from dpauc.federation import TrialFailure

        with pytest.raises(TrialFailure):
            run_protocol(ProtocolConfig(Protocol.RANK_RR, eps_total=0.0), ref_data, SeededRng(0))

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(protocol="threshold-laplace", eps_total=0),
            dict(protocol="threshold-laplace", grid_size=0),
            dict(protocol="threshold-gaussian", delta=0),
            dict(protocol="rank-laplace", alpha=1.0),
            dict(protocol="rank-rr", eps_total=-1),
            dict(protocol="rank-rr", n_clients=0),
        ],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            ProtocolConfig(**kwargs)

    def test_exact_pn_uses_whole_budget(self):
        cfg = ProtocolConfig(Protocol.RANK_LAPLACE, eps_total=3.0, use_exact_pn=True)
        assert cfg.rank_budgets == (3.0, None)
        assert ProtocolConfig(Protocol.RANK_LAPLACE, eps_total=3.0, alpha=0.5).rank_budgets == (1.5, 1.5)
