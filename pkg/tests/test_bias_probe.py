import csv
import math

import numpy as np
import pytest

from conftest import instance_from_chain, two_state, zero_reward
from tdforge import bias_probe as bp
from tdforge.errors import InvalidInputError
from tdforge.linear_approx import build_feature_map
from tdforge.mdp_core import chain_from_matrix, estimate_mixing
from tdforge.td_learner import TdConfig, run_td0
from tdforge.td_oracle import solve_fixed_point, stationary_gradient


def cycle_chain(n, seed=0):
    """Deterministic rotation; periodic, so pi (uniform) is attached by hand."""
    rng = np.random.default_rng(seed)
    chain = chain_from_matrix(np.roll(np.eye(n), 1, axis=1), rng.random((n, n)), 0.9)
    return type(chain)(chain.p_mu, chain.reward_mu, chain.r_inf, chain.gamma, np.full(n, 1.0 / n))


class TestLemmaReport:
    def test_slack_and_pass(self):
        assert bp.LemmaReport("x", 1.0, 2.0).slack == 1.0
        assert bp.LemmaReport("x", 1.0 + 5e-13, 1.0).passed
        assert not bp.LemmaReport("x", 1.0 + 2e-12, 1.0).passed

    def test_csv(self, tmp_path):
        path = tmp_path / "r.csv"
        bp.write_reports_csv([bp.LemmaReport("a", 0.1, 0.3, "u=1"), bp.LemmaReport("b", 2.0, 1.0)], path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["lemma_id", "params", "lhs", "bound", "slack", "pass"]
        assert rows[1][0] == "a" and float(rows[1][2]) == 0.1 and rows[1][5] == "true"
        assert rows[2][5] == "false"


class TestConditionalMean:
    def test_one_hot_row(self, small_instance, rng):
        chain = cycle_chain(5)
        fm = build_feature_map(rng.normal(size=(5, 2)))
        theta = rng.normal(size=2)
        for s in range(5):
            s2 = (s + 1) % 5
            g = bp.update_vector(theta, s, s2, chain.reward_mu[s, s2], chain.gamma, fm.phi)
            assert np.allclose(bp.conditional_update_mean(theta, s, chain, fm), g, rtol=1e-15)

    def test_monte_carlo(self, small_instance):
        rng = np.random.default_rng(21)
        chain, fm = small_instance.chain, small_instance.features
        theta = rng.normal(size=3)
        s = 2
        n_samples = 1_000_000
        nxt = np.minimum((rng.random(n_samples)[:, None] > np.cumsum(chain.p_mu[s])).sum(1), chain.n - 1)
        v = fm.phi @ theta
        td = chain.reward_mu[s, nxt] + chain.gamma * v[nxt] - v[s]
        mc = td.mean() * fm.phi[s]
        se = td.std() / math.sqrt(n_samples) * np.abs(fm.phi[s])
        exact = bp.conditional_update_mean(theta, s, chain, fm)
        assert np.all(np.abs(mc - exact) <= 3 * se + 1e-12)

    def test_tower_property(self, small_instance, small_oracle, rng):
        chain, fm = small_instance.chain, small_instance.features
        for _ in range(10):
            theta = rng.normal(size=3) * 4
            avg = sum(chain.pi[s] * bp.conditional_update_mean(theta, s, chain, fm) for s in range(chain.n))
            assert np.allclose(avg, stationary_gradient(small_oracle, theta), atol=1e-10)


class TestDecompose:
    def test_reconstruction(self, small_instance, small_oracle, rng):
        chain = small_instance.chain
        for _ in range(50):
            theta = rng.normal(size=3) * 3
            s = int(rng.integers(chain.n))
            s2 = int(rng.choice(chain.n, p=chain.p_mu[s]))
            dec = bp.decompose_step(theta, s, (s, s2, chain.reward_mu[s, s2]), chain, small_instance.features,
                                    small_oracle)
            assert np.max(np.abs(dec.xi_t + dec.b_t + dec.gbar_t - dec.g_t)) <= 1e-12
            assert dec.s_t == s

    def test_mean_bias_zero_under_pi(self, small_instance, small_oracle, rng):
        chain = small_instance.chain
        theta = rng.normal(size=3)
        mean_b = np.zeros(3)
        for s in range(chain.n):
            s2 = int(np.argmax(chain.p_mu[s]))
            dec = bp.decompose_step(theta, s, (s, s2, chain.reward_mu[s, s2]), chain, small_instance.features,
                                    small_oracle)
            mean_b += chain.pi[s] * dec.b_t
        assert np.max(np.abs(mean_b)) <= 1e-10

    def test_deterministic_chain_has_no_noise(self, rng):
        chain = cycle_chain(4)
        fm = build_feature_map(rng.normal(size=(4, 2)))
        oracle = solve_fixed_point(chain, fm)
        theta = rng.normal(size=2)
        for s in range(4):
            s2 = (s + 1) % 4
            dec = bp.decompose_step(theta, s, (s, s2, chain.reward_mu[s, s2]), chain, fm, oracle)
            assert not dec.xi_t.any()

    def test_source_mismatch(self, small_instance, small_oracle):
        with pytest.raises(InvalidInputError, match="starts at"):
            bp.decompose_step(np.zeros(3), 1, (2, 3, 0.0), small_instance.chain, small_instance.features,
                              small_oracle)


class TestGradientBound:
    def test_theta_zero(self, small_instance):
        chain, fm = small_instance.chain, small_instance.features
        rep = bp.gradient_bound_check(np.zeros(3), (0, 1, chain.reward_mu[0, 1]), fm, chain.r_inf, chain.gamma)
        assert rep.bound == chain.r_inf * fm.phi_inf and rep.passed

    def test_fuzz(self, small_instance, rng):
        chain, fm = small_instance.chain, small_instance.features
        for _ in range(2000):
            theta = rng.normal(size=3) * 10 ** rng.uniform(-3, 3)
            s, s2 = rng.integers(chain.n, size=2)
            assert bp.gradient_bound_check(theta, (s, s2, chain.reward_mu[s, s2]), fm, chain.r_inf,
                                           chain.gamma).passed

    def test_nearly_tight(self):
        fm = build_feature_map(np.array([[1.0], [-1.0]]))
        theta = np.array([-1e6])
        rep = bp.gradient_bound_check(theta, (0, 1, 1.0), fm, 1.0, 0.999)
        assert rep.passed and rep.lhs / rep.bound > 0.9


class TestLipschitz:
    def test_equal_points(self, small_instance):
        a, b = bp.lipschitz_check(np.ones(3), np.ones(3), (0, 1, 0.5), small_instance.chain,
                                  small_instance.features)
        assert a.lhs == 0 and b.lhs == 0

    def test_fuzz(self, small_instance, rng):
        chain = small_instance.chain
        for _ in range(1000):
            ta, tb = rng.normal(size=(2, 3)) * 10 ** rng.uniform(-2, 2)
            s, s2 = rng.integers(chain.n, size=2)
            a, b = bp.lipschitz_check(ta, tb, (s, s2, chain.reward_mu[s, s2]), chain, small_instance.features)
            assert a.passed and b.passed

    def test_operator_norm_of_a(self, small_instance, small_oracle):
        assert np.linalg.norm(small_oracle.a_matrix, 2) <= 2 * small_instance.features.phi_inf ** 2


class TestXiLipschitz:
    def _args(self, inst, ta, tb, tr, oracle):
        g_bound = bp.ell(ta, inst.chain.r_inf, inst.features.phi_inf)
        d_b = float(np.linalg.norm(tb - oracle.theta_star))
        return ta, tb, tr, g_bound, d_b, inst.chain, inst.features, oracle

    def test_equal_points(self, small_instance, small_oracle):
        t = np.array([0.2, -0.1, 1.0])
        rep = bp.xi_lipschitz_check(*self._args(small_instance, t, t, (0, 1, 0.3), small_oracle))
        assert rep.lhs == 0 and rep.passed

    def test_fuzz(self, small_instance, small_oracle, rng):
        chain = small_instance.chain
        for _ in range(1000):
            ta, tb = rng.normal(size=(2, 3)) * 10 ** rng.uniform(-2, 2)
            s = int(rng.integers(chain.n))
            s2 = int(rng.choice(chain.n, p=chain.p_mu[s]))
            rep = bp.xi_lipschitz_check(*self._args(small_instance, ta, tb, (s, s2, chain.reward_mu[s, s2]),
                                                    small_oracle))
            assert rep.passed

    def test_theta_b_at_fixed_point(self, small_instance, small_oracle, rng):
        tb = small_oracle.theta_star
        for _ in range(50):
            ta = tb + rng.normal(size=3)
            rep = bp.xi_lipschitz_check(*self._args(small_instance, ta, tb, (1, 2, small_instance.chain.reward_mu[1, 2]),
                                                    small_oracle))
            assert rep.passed


@pytest.fixture(scope="module")
def slow():
    inst = instance_from_chain([[0.95, 0.05], [0.05, 0.95]], [[0.0, 1.0], [0.5, 0.2]],
                               [[1.0, 0.3], [-0.4, 1.0]], gamma=0.9)
    return inst, solve_fixed_point(inst.chain, inst.features), estimate_mixing(inst.chain)


class TestTvBias:
    def test_mixed_chain(self, slow):
        inst, oracle, mix = slow
        rep = bp.tv_bias_check(np.ones(2), 0, 2000, inst.chain, inst.features, oracle, mix)
        assert rep.lhs <= 1e-12 and rep.passed

    def test_k_zero(self, slow):
        inst, oracle, mix = slow
        theta = np.array([0.5, -2.0])
        rep = bp.tv_bias_check(theta, 1, 0, inst.chain, inst.features, oracle, mix)
        assert rep.lhs <= 2 * bp.ell(theta, inst.chain.r_inf, inst.features.phi_inf) and rep.passed

    def test_geometric_decay(self, slow):
        inst, oracle, mix = slow
        theta = np.array([1.0, 1.0])
        lhs = [bp.tv_bias_check(theta, 0, k, inst.chain, inst.features, oracle, mix).lhs for k in range(31)]
        assert all(bp.tv_bias_check(theta, 0, k, inst.chain, inst.features, oracle, mix).passed for k in range(31))
        rate = math.exp(np.polyfit(np.arange(31), np.log(lhs), 1)[0])
        assert rate == pytest.approx(0.9, abs=1e-3)
        assert mix.alpha == pytest.approx(0.9, abs=1e-3)

    @pytest.mark.parametrize("a,b", [(0.05, 0.1), (0.3, 0.2), (0.7, 0.6), (0.9, 0.95)])
    def test_nonincreasing_on_two_state_chains(self, a, b):
        # one nontrivial eigenvalue, so lhs_k = |1 - a - b|^k * const; with more states the
        # projected bias is a signed sum of exponentials and may rise (see the decisions ledger)
        inst = instance_from_chain([[1 - a, a], [b, 1 - b]], [[0.2, 1.0], [0.0, 0.6]], [[1.0, 0.3], [-0.4, 1.0]])
        oracle = solve_fixed_point(inst.chain, inst.features)
        mix = estimate_mixing(inst.chain)
        theta = np.array([0.7, -1.1])
        for s in range(2):
            lhs = [bp.tv_bias_check(theta, s, k, inst.chain, inst.features, oracle, mix).lhs for k in range(40)]
            assert all(y <= x + 1e-12 for x, y in zip(lhs, lhs[1:]))

    def test_exact_mixing_chain(self, rng):
        pi = np.array([0.3, 0.7])
        inst = instance_from_chain(np.tile(pi, (2, 1)), rng.random((2, 2)), [[1.0], [0.5]])
        oracle = solve_fixed_point(inst.chain, inst.features)
        mix = estimate_mixing(inst.chain)
        assert mix.exact
        for k in range(1, 5):
            assert bp.tv_bias_check(np.ones(1), 0, k, inst.chain, inst.features, oracle, mix).passed

    def test_negative_k(self, slow):
        inst, oracle, mix = slow
        with pytest.raises(InvalidInputError):
            bp.tv_bias_check(np.ones(2), 0, -1, inst.chain, inst.features, oracle, mix)


class TestMartingale:
    def test_single_state_chain_has_zero_sum(self):
        inst = instance_from_chain([[1.0]], [[0.7]], [[1.0]])
        oracle = solve_fixed_point(inst.chain, inst.features)
        recs = [run_td0(inst.chain, inst.features, oracle, TdConfig(100.0, 200, seed=s), diagnostics=True)
                for s in range(30)]
        stat = bp.martingale_sum_check(recs)
        assert stat.mean == 0.0 and stat.z == 0.0 and stat.warning is None

    def test_zero_reward(self, small_instance):
        inst = zero_reward(small_instance)
        oracle = solve_fixed_point(inst.chain, inst.features)
        recs = [run_td0(inst.chain, inst.features, oracle, TdConfig(100.0, 100, seed=s), diagnostics=True)
                for s in range(5)]
        stat = bp.martingale_sum_check(recs)
        assert stat.mean == 0.0 and "replications" in stat.warning

    def test_needs_diagnostics(self, small_instance, small_oracle):
        rec = run_td0(small_instance.chain, small_instance.features, small_oracle, TdConfig(100.0, 20))
        with pytest.raises(InvalidInputError):
            bp.martingale_sum_check([rec])

    def test_diagnostic_sums_match_direct_decomposition(self, small_instance, small_oracle):
        chain, fm = small_instance.chain, small_instance.features
        rec = run_td0(chain, fm, small_oracle, TdConfig(100.0, 300, seed=4), diagnostics=True)
        rng = np.random.default_rng(4)
        from tdforge import kernels
        from tdforge.mdp_core import cumulative_rows
        cdf = np.cumsum(chain.pi)
        s0 = int(min(np.searchsorted(cdf, rng.random(), side="right"), chain.n - 1))
        states = kernels.sample_path(cumulative_rows(chain.p_mu), s0, rng.random(300))
        sums = np.zeros(5)
        for t in range(300):
            theta = rec.thetas[t]
            s, s2 = states[t], states[t + 1]
            dec = bp.decompose_step(theta, s, (s, s2, chain.reward_mu[s, s2]), chain, fm, small_oracle)
            e = theta - small_oracle.theta_star
            eta = rec.eta[t]
            sums += [eta * dec.xi_t @ e, eta * dec.b_t @ e, eta**2 * dec.xi_t @ dec.xi_t,
                     eta**2 * dec.b_t @ dec.b_t, eta**2 * dec.gbar_t @ dec.gbar_t]
        assert np.allclose(rec.diag_final, sums, rtol=1e-9, atol=1e-15)


class TestSumLemmas:
    def test_a1_single_term(self):
        rep = bp.lemma_sum_a1(0, 2)
        assert rep.lhs == pytest.approx(1 / (math.log(4) ** 2 * 2), rel=1e-14)
        assert rep.lhs == pytest.approx(0.2602, abs=1e-4) and rep.bound == pytest.approx(1.8205, abs=1e-4)

    def test_a1_long(self):
        assert bp.lemma_sum_a1(0, 10**6).passed

    @pytest.mark.parametrize("fn", [bp.lemma_sum_a1, bp.lemma_sum_a2])
    def test_empty_range(self, fn):
        rep = fn(5, 6)
        assert rep.lhs == 0.0 and rep.passed

    def test_a2_single_term(self):
        rep = bp.lemma_sum_a2(0, 2)
        assert rep.lhs == pytest.approx(1 / (math.log(4) * 2), rel=1e-14)
        assert rep.bound == pytest.approx(2 / math.log(4))

    @pytest.mark.parametrize("u", [0, 1, 10, 100])
    @pytest.mark.parametrize("t", [10**3, 10**5])
    def test_a2_grid(self, u, t):
        assert bp.lemma_sum_a2(u, t).passed

    def test_a3(self):
        assert bp.lemma_sum_a3(1).lhs == pytest.approx(1 / math.log(3) ** 2, rel=1e-15)
        assert bp.lemma_sum_a3(1).lhs == pytest.approx(0.8285, abs=1e-4)
        assert bp.lemma_sum_a3(10**7).passed
        assert bp.lemma_sum_a3(10**7).bound < 3

    def test_a3_monotone(self):
        vals = [bp.lemma_sum_a3(t).lhs for t in (1, 2, 5, 50, 5000)]
        assert vals == sorted(vals)

    @pytest.mark.parametrize("u,t", [(5, 5), (-1, 3), (10, 2)])
    def test_domain(self, u, t):
        with pytest.raises(InvalidInputError):
            bp.lemma_sum_a1(u, t)


class TestBiasBudget:
    def _records(self, inst, oracle, reps=30, T=512):
        return [run_td0(inst.chain, inst.features, oracle, TdConfig(100.0, T, seed=s), diagnostics=True)
                for s in range(reps)]

    def test_zero_reward(self, small_instance):
        inst = zero_reward(small_instance)
        oracle = solve_fixed_point(inst.chain, inst.features)
        budget = bp.bias_budget_probe(self._records(inst, oracle, 3, 64), estimate_mixing(inst.chain), oracle,
                                      inst.chain, inst.features, TdConfig(100.0, 64))
        for key in ("martingale", "bias", "xi_sq", "b_sq", "gbar_sq"):
            assert budget.empirical[key] == 0.0

    def test_bounds_hold(self, small_instance, small_oracle):
        recs = self._records(small_instance, small_oracle)
        budget = bp.bias_budget_probe(recs, estimate_mixing(small_instance.chain), small_oracle,
                                      small_instance.chain, small_instance.features, TdConfig(100.0, 512))
        ids = [r.lemma_id for r in budget.reports]
        assert ids == ["variance_xi", "variance_b", "variance_gbar", "bias"]
        assert all(r.passed for r in budget.reports)
        assert 0 <= budget.u_t < 512

    def test_without_mixing(self, small_instance, small_oracle):
        recs = self._records(small_instance, small_oracle, 3, 64)
        budget = bp.bias_budget_probe(recs, None, small_oracle, small_instance.chain, small_instance.features,
                                      TdConfig(100.0, 64))
        assert [r.lemma_id for r in budget.reports] == ["variance_xi", "variance_b", "variance_gbar"]

    def test_needs_full_records(self, small_instance, small_oracle):
        recs = self._records(small_instance, small_oracle, 2, 64)
        with pytest.raises(InvalidInputError):
            bp.bias_budget_probe(recs, None, small_oracle, small_instance.chain, small_instance.features,
                                 TdConfig(100.0, 64, record_stride=2))


def test_mixing_horizon():
    from tdforge.mdp_core import MixingFit
    fit = MixingFit(2.0, 0.5, 200, 0.0)
    u = math.log(2.0 * math.sqrt(1000)) / math.log(2.0)
    assert bp.mixing_horizon(fit, 1000) == math.floor(u)
    assert bp.mixing_horizon(MixingFit(1.0, 1e-300, 200, 0.0, exact=True), 1000) == 0
    assert bp.mixing_horizon(MixingFit(1e9, 0.999, 200, 0.0), 10) == 9
