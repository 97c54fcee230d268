import itertools

import numpy as np
import pytest
from scipy import stats

from flowlik.models import ExponentialModel, GammaModel
from flowlik.simulate import (Flow, SessionConfig, collect_nontrivial,
                              derive_rng, generate_flow, generate_session,
                              simulate_session, thin_flow, thin_flow_fast,
                              thin_session_fast)
from flowlik.sizes import zeta_pmf, zipf_pmf

GAMMA = GammaModel(0.6, 526.32)


class TestGenerateFlow:
    def test_single_packet_flow(self):
        f = generate_flow(GAMMA, 1, derive_rng(0, 0))
        assert f.size == 1
        assert f.gaps.size == 1 and f.gaps[0] == 0.0  # duration-only lead

    def test_gap_mean_lln(self):
        # mean within-flow gap over many draws ~ alpha/beta within 3 SE
        rng = derive_rng(1, 0)
        f = generate_flow(GAMMA, 100_001, rng)
        gaps = f.gaps[1:]
        mean, sd = GAMMA.mean(), np.sqrt(0.6) / 526.32
        assert abs(gaps.mean() - mean) < 3 * sd / np.sqrt(gaps.size)

    def test_lead_gap_exponential(self):
        rng = derive_rng(2, 0)
        leads = np.array([generate_flow(GAMMA, 1, rng, flow_rate=2.0).gaps[0]
                          for _ in range(20_000)])
        assert abs(leads.mean() - 0.5) < 3 * 0.5 / np.sqrt(leads.size)

    def test_strictly_positive_gaps(self):
        f = generate_flow(GAMMA, 5_000, derive_rng(3, 0), flow_rate=1.0)
        assert np.all(f.gaps > 0)

    def test_size_validation(self):
        with pytest.raises(ValueError):
            generate_flow(GAMMA, 0, derive_rng(0, 0))


class TestSession:
    def test_single_flow_session(self):
        cfg = SessionConfig(1.0, GAMMA, zipf_pmf(1.0, [3]), n_flows=1, seed=4)
        flows = generate_session(cfg)
        assert len(flows) == 1 and flows[0].size == 3

    def test_flow_start_gaps_mean(self):
        rng = derive_rng(5, 0)
        sample = simulate_session(GAMMA, zipf_pmf(1.0, [2]), 100_000, rng,
                                  flow_rate=4.0)
        assert abs(sample.leads.mean() - 0.25) < 3 * 0.25 / np.sqrt(1e5)

    def test_vectorised_matches_flow_contract(self):
        rng = derive_rng(6, 0)
        sample = simulate_session(GAMMA, zeta_pmf(2.012085), 500, rng)
        flows = sample.flows()
        assert len(flows) == 500
        for i in (0, 13, 499):
            assert flows[i].size == sample.sizes[i]
            np.testing.assert_allclose(flows[i].gaps[1:].sum(),
                                       sample.durations[i], rtol=1e-12)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SessionConfig(0.0, GAMMA, zipf_pmf(1.0, [2]), 1)
        with pytest.raises(ValueError):
            SessionConfig(1.0, GAMMA, zipf_pmf(1.0, [2]), 1, thinning_q=0.0)


class TestThinning:
    def test_q1_identity(self):
        f = generate_flow(GAMMA, 50, derive_rng(7, 0))
        assert thin_flow(f, 1.0, derive_rng(7, 1)) is f
        assert thin_flow_fast(f, 1.0, derive_rng(7, 1)) is f

    def test_retained_count_binomial_chisquare(self):
        # retained counts over many replicates of a size-101 flow at q=0.1
        rng = derive_rng(8, 0)
        f = generate_flow(GAMMA, 101, rng)
        counts = np.array([thin_flow(f, 0.1, rng).size for _ in range(100_000)])
        edges = np.arange(0, 25)
        obs = np.array([(counts == e).sum() for e in edges])
        probs = stats.binom.pmf(edges, 101, 0.1)
        # merge the tail
        obs = np.append(obs, counts.size - obs.sum())
        probs = np.append(probs, 1 - probs.sum())
        keep = probs * counts.size >= 5
        chi2 = ((obs[keep] - probs[keep] * counts.size) ** 2
                / (probs[keep] * counts.size)).sum()
        crit = stats.chi2.ppf(0.99, keep.sum() - 1)
        assert chi2 < crit

    def test_empty_result_probability(self):
        rng = derive_rng(9, 0)
        f = generate_flow(GAMMA, 11, rng)
        none_kept = np.array([thin_flow(f, 0.001, rng).size == 0
                              for _ in range(200_000)])
        p = 0.999 ** 11
        assert abs(none_kept.mean() - p) < 4 * np.sqrt(p * (1 - p) / 2e5)

    def test_subsequence_property(self):
        rng = derive_rng(10, 0)
        f = generate_flow(GAMMA, 200, rng)
        for thinner in (thin_flow, thin_flow_fast):
            t = thinner(f, 0.3, rng)
            assert np.all(np.isin(t.arrivals, f.arrivals))
            assert np.all(np.diff(t.arrivals) > 0)

    def test_fast_matches_enumeration_joint(self):
        # joint law of (count, retained index set) on a size-4 flow at q=0.5
        # against the 16 Bernoulli patterns, 4 SE over 1e6 replicates
        n_rep = 1_000_000
        rng = derive_rng(11, 0)
        f = generate_flow(GAMMA, 4, rng)
        arr = tuple(f.arrivals)
        counts = {}
        for _ in range(n_rep):
            t = thin_flow_fast(f, 0.5, rng)
            key = tuple(np.searchsorted(arr, t.arrivals))
            counts[key] = counts.get(key, 0) + 1
        p = 0.5 ** 4
        se = np.sqrt(p * (1 - p) / n_rep)
        for pattern_size in range(5):
            for pattern in itertools.combinations(range(4), pattern_size):
                got = counts.get(tuple(pattern), 0) / n_rep
                assert abs(got - p) < 4 * se, (pattern, got)

    def test_fast_and_direct_same_distribution_small_flows(self):
        # retained-count distributions agree between the two thinners
        rng = derive_rng(12, 0)
        f = generate_flow(GAMMA, 8, rng)
        a = np.array([thin_flow(f, 0.4, rng).size for _ in range(60_000)])
        b = np.array([thin_flow_fast(f, 0.4, rng).size for _ in range(60_000)])
        for k in range(9):
            pa, pb = (a == k).mean(), (b == k).mean()
            se = np.sqrt(max(pa * (1 - pa), 1e-9) * 2 / 60_000)
            assert abs(pa - pb) < 5 * se

    def test_binomial_mean_large_sparse(self):
        rng = derive_rng(13, 0)
        f = generate_flow(GAMMA, 1001, rng)
        sizes = np.array([thin_flow_fast(f, 0.001, rng).size
                          for _ in range(30_000)])
        assert abs(sizes.mean() - 1.001) < 4 * np.sqrt(1.0 / 30_000)

    def test_q_validation(self):
        f = generate_flow(GAMMA, 3, derive_rng(14, 0))
        for bad in (0.0, -0.1, 1.2):
            with pytest.raises(ValueError):
                thin_flow(f, bad, derive_rng(0, 0))
            with pytest.raises(ValueError):
                thin_flow_fast(f, bad, derive_rng(0, 0))


class TestCollect:
    def test_exact_count_and_nontrivial(self):
        rng = derive_rng(15, 0)
        X, chunks, stats_ = collect_nontrivial(GAMMA, zeta_pmf(2.012085),
                                               500, rng)
        assert X.shape == (500, 3)
        assert np.all(X[:, 2] >= 2)
        assert stats_["flows_used"] == 500
        assert sum(ch.n_flows for ch in chunks) == 500

    def test_sampled_collect(self):
        rng = derive_rng(16, 0)
        X, _, _ = collect_nontrivial(GAMMA, zipf_pmf(1.0, [11, 101, 1001]),
                                     300, rng, q=0.1)
        assert X.shape == (300, 3)
        assert np.all(X[:, 2] >= 2)
        assert np.all(X[:, 1] > 0)

    def test_determinism(self):
        a, _, _ = collect_nontrivial(GAMMA, zeta_pmf(2.012085), 200,
                                     derive_rng(17, 3))
        b, _, _ = collect_nontrivial(GAMMA, zeta_pmf(2.012085), 200,
                                     derive_rng(17, 3))
        np.testing.assert_array_equal(a, b)


def test_derive_rng_streams_independent():
    a = derive_rng(42, 0).random(4)
    b = derive_rng(42, 1).random(4)
    c = derive_rng(42, 0).random(4)
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, c)


def test_flow_validation():
    with pytest.raises(ValueError):
        Flow(np.array([1.0, 0.5]))  # not increasing
    with pytest.raises(ValueError):
        Flow(np.array([-1.0, 0.5]))
