
import numpy as np
import pytest

from rdlvm.ba import BaConfig, ba_step, count_distinct_rows, optimize, support_report
from rdlvm.errors import ImpossibleDataPoint, InvalidInit
from rdlvm.model import LogLikMatrix, PriorWeights, eval_nll

from conftest import random_lik
from oracles import grid_min, polished_min


class TestStep:
    def test_symmetric_fixed_point(self, symmetric):
        p = ba_step(symmetric, PriorWeights.uniform(2))
        np.testing.assert_allclose(p.weights, [0.5, 0.5], atol=1e-15)

    def test_dominating(self, dominating):
        p = ba_step(dominating, PriorWeights.from_weights([0.5, 0.5]))
        np.testing.assert_allclose(p.weights, [2 / 3, 1 / 3], atol=1e-15)

    @pytest.mark.parametrize("seed", range(20))
    def test_monotone(self, seed):
        rng = np.random.default_rng(seed)
        lik = random_lik(rng, int(rng.integers(1, 15)), int(rng.integers(1, 8)))
        p = PriorWeights.from_weights(rng.dirichlet(np.ones(lik.n_support)))
        before = eval_nll(lik, p).nll
        after = eval_nll(lik, ba_step(lik, p)).nll
        assert after <= before + 1e-10

    def test_propagates_impossible(self):
        lik = LogLikMatrix(np.array([[0.0, -np.inf], [-np.inf, 0.0]]))
        with pytest.raises(ImpossibleDataPoint):
            ba_step(lik, PriorWeights.from_weights([1, 0]))


class TestOptimize:
    def test_dominating_converges(self, dominating):
        r = optimize(dominating, None, BaConfig(gap_tol=1e-6))
        assert r.converged and r.certificate.holds
        assert r.prior.weights[0] == pytest.approx(1.0, abs=1e-6)
        assert eval_nll(dominating, r.prior).nll == pytest.approx(0.0, abs=1e-6)
        # the second atom halves every step: c = 1/2 near the optimum
        w = [rec.nll for rec in r.trace]
        assert len(w) < 40

    def test_symmetric_one_iteration(self, symmetric):
        r = optimize(symmetric, None)
        assert r.converged and r.n_iters == 1
        assert r.trace.records[0].max_log_c <= 1e-15

    def test_invalid_init(self, symmetric):
        with pytest.raises(InvalidInit):
            optimize(symmetric, PriorWeights.from_weights([1, 0]))

    def test_prune_tol_bound(self, symmetric):
        with pytest.raises(ValueError):
            optimize(symmetric, None, BaConfig(prune_tol=0.5))

    def test_non_convergence_flag(self):
        lik = random_lik(np.random.default_rng(3), 10, 5)
        r = optimize(lik, None, BaConfig(max_iters=1))
        assert not r.converged and r.n_iters == 1

    @pytest.mark.parametrize("seed", range(10))
    def test_fixed_point(self, seed):
        rng = np.random.default_rng(seed)
        lik = random_lik(rng, 8, 3)
        r = optimize(lik, None, BaConfig(gap_tol=1e-10, prune_tol=0))
        again = optimize(lik, r.prior, BaConfig(gap_tol=1e-6))
        assert again.n_iters <= 1
        np.testing.assert_allclose(again.prior.weights, r.prior.weights, atol=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_row_scale_invariance(self, seed):
        rng = np.random.default_rng(seed)
        lik = random_lik(rng, 12, 4)
        shift = rng.normal(size=lik.n_data) * 3
        a = optimize(lik, None, BaConfig(gap_tol=1e-9))
        b = optimize(lik.shift_rows(shift), None, BaConfig(gap_tol=1e-9))
        np.testing.assert_allclose(a.prior.weights, b.prior.weights, atol=1e-6)
        assert eval_nll(lik.shift_rows(shift), b.prior).nll == pytest.approx(
            eval_nll(lik, a.prior).nll - shift.mean(), abs=1e-6
        )

    def test_trace_invariants(self):
        lik = random_lik(np.random.default_rng(11), 15, 6)
        r = optimize(lik, None)
        nll = r.trace.column("nll")
        assert np.all(np.diff(nll) <= 1e-10)
        assert np.all(r.trace.column("max_log_c") >= -1e-12)
        assert list(r.trace.column("iter")) == list(range(1, r.n_iters + 1))

    def test_trace_csv(self, symmetric):
        text = optimize(symmetric, None).trace.to_csv()
        lines = text.splitlines()
        assert lines[0] == "iter,nll,max_log_c,std_log_c,support_size"
        assert len(lines) == 2 and lines[1].startswith("1,0.693147")

    def test_deterministic(self):
        lik = random_lik(np.random.default_rng(2), 9, 5)
        assert optimize(lik, None).trace.to_csv() == optimize(lik, None).trace.to_csv()


class TestGridOracle:
    @pytest.mark.parametrize("seed", range(5))
    def test_random_20x3_reaches_grid_minimum(self, seed):
        rng = np.random.default_rng(seed)
        lik = random_lik(rng, 20, 3)
        r = optimize(lik, None, BaConfig(gap_tol=1e-6))
        assert r.converged
        final = eval_nll(lik, r.prior).nll
        gmin, _ = grid_min(lik.entries, 0.005)
        assert final <= gmin + 1e-12
        assert final >= polished_min(lik.entries) - 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_sandwich_every_iterate(self, seed):
        rng = np.random.default_rng(100 + seed)
        lik = random_lik(rng, int(rng.integers(2, 20)), 3)
        opt = polished_min(lik.entries)
        r = optimize(lik, PriorWeights.from_weights([0.8, 0.1, 0.1]))
        for rec in r.trace:
            assert rec.nll - rec.max_log_c <= opt + 1e-12
            assert opt <= rec.nll + 1e-9


class TestSupport:
    def test_dominating(self, dominating):
        r = optimize(dominating, None, BaConfig(prune_tol=1e-6))
        rep = support_report(r, 2)
        assert rep.support_size == 1 and not rep.violation

    def test_symmetric(self, symmetric):
        rep = support_report(optimize(symmetric, None), 2)
        assert rep.support_size == 2 and not rep.violation

    def test_flags_violation(self):
        lik = LogLikMatrix(np.zeros((1, 3)))
        rep = support_report(optimize(lik, None), 1)
        assert rep.support_size == 3 and rep.violation

    def test_distinct_rows(self):
        lik = LogLikMatrix(np.array([[0.0, -1.0], [0.0, -1.0], [-1.0, 0.0]]))
        assert count_distinct_rows(lik) == 2

    @pytest.mark.parametrize("seed", range(10))
    def test_lindsay(self, seed):
        rng = np.random.default_rng(500 + seed)
        n = int(rng.integers(2, 6))
        lik = random_lik(rng, n, n + int(rng.integers(1, 8)))
        r = optimize(lik, None, BaConfig(gap_tol=1e-6, prune_tol=1e-6))
        assert r.converged
        assert not support_report(r, count_distinct_rows(lik)).violation
