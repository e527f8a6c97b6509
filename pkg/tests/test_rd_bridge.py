import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdlvm.ba import BaConfig
from rdlvm.errors import InfiniteDistortion, InvalidWeights
from rdlvm.model import LogLikMatrix, PriorWeights, eval_nll
from rdlvm.rd_bridge import (
    ChannelMatrix,
    channel_from_prior,
    elbo,
    lagrangian,
    lagrangian_decomposition,
    verify_equivalence,
)

from conftest import random_lik

# 0.9 log(1.8) + 0.1 log(0.2) and 0.9 (-log 0.9) + 0.1 (-log 0.1), by hand
SYM_MI = 0.9 * math.log(1.8) + 0.1 * math.log(0.2)
SYM_DIST = -0.9 * math.log(0.9) - 0.1 * math.log(0.1)


class TestChannel:
    def test_symmetric(self, symmetric):
        q = channel_from_prior(symmetric, PriorWeights.uniform(2))
        np.testing.assert_allclose(q.rows, [[0.9, 0.1], [0.1, 0.9]], atol=1e-15)

    def test_one_hot_prior(self):
        lik = random_lik(np.random.default_rng(0), 5, 3)
        q = channel_from_prior(lik, PriorWeights.from_weights([0, 1, 0]))
        np.testing.assert_array_equal(q.rows, np.tile([0.0, 1.0, 0.0], (5, 1)))

    def test_sharpening(self):
        lik = random_lik(np.random.default_rng(1), 6, 4)
        q = channel_from_prior(lik, PriorWeights.uniform(4), alpha=100)
        hard = np.eye(4)[np.argmax(lik.entries, axis=1)]
        np.testing.assert_allclose(q.rows, hard, atol=1e-6)

    def test_validation(self):
        with pytest.raises(InvalidWeights):
            ChannelMatrix(np.array([[0.5, 0.6]]))


class TestLagrangian:
    def test_symmetric(self, symmetric):
        lv = lagrangian(symmetric, channel_from_prior(symmetric, PriorWeights.uniform(2)))
        assert lv.mutual_info == pytest.approx(0.368064207168497, abs=1e-12)
        assert lv.mutual_info == pytest.approx(SYM_MI, abs=1e-15)
        assert lv.expected_distortion == pytest.approx(SYM_DIST, abs=1e-15)
        assert lv.expected_distortion == pytest.approx(0.325083, abs=1e-6)
        assert lv.total == pytest.approx(math.log(2), abs=1e-12)

    def test_identical_rows(self):
        lik = random_lik(np.random.default_rng(2), 4, 3)
        q = ChannelMatrix(np.tile([0.2, 0.3, 0.5], (4, 1)))
        assert lagrangian(lik, q).mutual_info == pytest.approx(0.0, abs=1e-15)

    def test_deterministic_distinct(self):
        lik = random_lik(np.random.default_rng(3), 5, 5)
        assert lagrangian(lik, ChannelMatrix(np.eye(5))).mutual_info == pytest.approx(math.log(5), abs=1e-14)

    def test_infinite_distortion(self):
        lik = LogLikMatrix(np.array([[0.0, -np.inf]]))
        with pytest.raises(InfiniteDistortion):
            lagrangian(lik, ChannelMatrix(np.array([[0.5, 0.5]])))
        assert lagrangian(lik, ChannelMatrix(np.array([[1.0, 0.0]]))).expected_distortion == 0.0

    def test_total_identity(self):
        lik = random_lik(np.random.default_rng(4), 4, 3)
        q = ChannelMatrix(np.random.default_rng(5).dirichlet(np.ones(3), size=4))
        lv = lagrangian(lik, q, alpha=1.7)
        assert lv.total == pytest.approx(lv.mutual_info + 1.7 * lv.expected_distortion, abs=1e-12)


class TestElbo:
    def test_tight_at_posterior(self):
        rng = np.random.default_rng(6)
        lik = random_lik(rng, 6, 4)
        for alpha in (0.5, 1.0, 2.0):
            p = PriorWeights.from_weights(rng.dirichlet(np.ones(4)))
            ev = eval_nll(lik, p, alpha)
            q = channel_from_prior(lik, p, alpha)
            for i in range(lik.n_data):
                assert elbo(lik.entries[i], q.rows[i], p, alpha) == pytest.approx(ev.log_evidence[i], abs=1e-10)

    def test_prior_as_q(self):
        rng = np.random.default_rng(7)
        lik = random_lik(rng, 3, 4)
        p = PriorWeights.from_weights(rng.dirichlet(np.ones(4)))
        ev = eval_nll(lik, p)
        for i in range(3):
            val = elbo(lik.entries[i], p.weights, p)
            assert val == pytest.approx(math.fsum(p.weights * lik.entries[i]), abs=1e-12)
            assert val <= ev.log_evidence[i]

    def test_perturbed_strictly_below(self, symmetric):
        p = PriorWeights.uniform(2)
        ev = eval_nll(symmetric, p)
        q = channel_from_prior(symmetric, p).rows
        rng = np.random.default_rng(8)
        for _ in range(100):
            i = int(rng.integers(2))
            row = np.clip(q[i] + rng.normal(scale=0.05, size=2), 1e-3, None)
            row = row / row.sum()
            assert elbo(symmetric.entries[i], row, p) < ev.log_evidence[i]

    def test_minus_inf_off_prior_support(self):
        p = PriorWeights.from_weights([1, 0])
        assert elbo([0.0, 0.0], [0.5, 0.5], p) == -math.inf


class TestIdentities:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 10), st.integers(1, 6), st.sampled_from([0.5, 1.0, 2.0]))
    def test_decomposition(self, seed, n, m, alpha):
        rng = np.random.default_rng(seed)
        lik = random_lik(rng, n, m)
        p = PriorWeights.from_weights(rng.dirichlet(np.ones(m)))
        nll, mi, dist, kl = lagrangian_decomposition(lik, p, alpha)
        assert nll == pytest.approx(mi + alpha * dist + kl, abs=1e-9)
        assert mi <= min(math.log(n), math.log(m)) + 1e-12
        q = channel_from_prior(lik, p, alpha)
        m_marg = PriorWeights.from_weights(q.output_marginal)
        nll_m, mi_m, dist_m, kl_m = lagrangian_decomposition(lik, m_marg, alpha)
        # with p set to the output marginal the divergence term is gone, and the
        # Lagrangian of the old channel upper-bounds the new NLL
        assert nll_m <= mi + alpha * dist + 1e-9

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 8), st.integers(1, 5))
    def test_average_elbo_bounds_nll(self, seed, n, m):
        rng = np.random.default_rng(seed)
        lik = random_lik(rng, n, m)
        p = PriorWeights.from_weights(rng.dirichlet(np.ones(m)))
        q = rng.dirichlet(np.ones(m), size=n)
        avg = np.mean([elbo(lik.entries[i], q[i], p) for i in range(n)])
        assert -avg >= eval_nll(lik, p).nll - 1e-12


class TestVerifyEquivalence:
    def test_symmetric(self, symmetric):
        rep = verify_equivalence(symmetric, 1.0)
        assert rep.passed and rep.abs_diff < 1e-9
        assert rep.prior_side == pytest.approx(math.log(2), abs=1e-9)
        assert rep.channel_side == pytest.approx(math.log(2), abs=1e-9)

    def test_dominating(self, dominating):
        rep = verify_equivalence(dominating, 1.0)
        assert rep.passed
        assert rep.prior_side == pytest.approx(0.0, abs=1e-5)
        assert rep.channel_side == pytest.approx(0.0, abs=1e-5)

    @pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
    @pytest.mark.parametrize("seed", range(4))
    def test_random(self, seed, alpha):
        lik = random_lik(np.random.default_rng(seed), 10, 4)
        rep = verify_equivalence(lik, alpha, BaConfig())
        assert rep.passed and rep.abs_diff <= 1e-5
        assert set(rep.to_json()) == {"prior_side", "channel_side", "abs_diff", "passed", "alpha"}
