"""Invariant suite behind ``tdforge verify``.

Every check yields a :class:`~tdforge.bias_probe.LemmaReport`.  Fuzz
campaigns are folded into one report per (instance, lemma) holding the
tightest case, with the campaign size and failure count in ``params``.
"""
from __future__ import annotations

import math
from typing import Iterable, Optional

import numpy as np

from tdforge import bias_probe as bp
from tdforge.errors import InvalidInputError, TdForgeError
from tdforge.instances import Instance, builtin_corpus
from tdforge.mdp_core import MixingFit, estimate_mixing
from tdforge.td_learner import TdConfig, run_td0
from tdforge.td_oracle import (TdOracle, bellman_apply, gradient_splitting_residual, potential,
                               projection_matrix, solve_fixed_point, stationary_gradient,
                               stationary_gradient_sum, value_iteration)

LEVELS = ("fast", "full")
FD_STEP = 1e-4
FD_RTOL = 1e-5
SPLIT_TOL = 1e-9
SOLVE_ATOL = 1e-10
PROJ_ATOL = 1e-8
TABULAR_ATOL = 1e-10
Z_LIMIT = 3.0
SUM_GRID_U = (0, 1, 10, 100, 1000)

_BUDGET = {
    "fast": {"thetas": 20, "fuzz": 200, "xi_fuzz": 100, "kmax": 50, "sum_t": (10**3, 10**5)},
    "full": {"thetas": 100, "fuzz": 12000, "xi_fuzz": 1200, "kmax": 200, "sum_t": (10**3, 10**5, 10**7)},
}


def hessian_fd(oracle: TdOracle, inst: Instance, theta=None, h: float = FD_STEP) -> np.ndarray:
    """Central second differences of ``f`` (evaluated through the norm route) at ``theta``."""
    chain, features = inst.chain, inst.features
    theta = oracle.theta_star if theta is None else np.asarray(theta, dtype=float)
    d = features.d
    eye = np.eye(d) * h

    def f(x):
        return potential(oracle, chain, features, x)

    out = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            val = (f(theta + eye[i] + eye[j]) - f(theta + eye[i] - eye[j])
                   - f(theta - eye[i] + eye[j]) + f(theta - eye[i] - eye[j])) / (4.0 * h * h)
            out[i, j] = out[j, i] = val
    return out


def hessian_fd_error(oracle: TdOracle, inst: Instance, theta=None, h: float = FD_STEP) -> float:
    """Largest entrywise relative gap between the analytic Hessian and finite differences."""
    fd = hessian_fd(oracle, inst, theta, h)
    hess = oracle.hessian
    denom = np.maximum(np.abs(hess), np.finfo(float).tiny)
    return float(np.max(np.abs(fd - hess) / denom))


def _fold(lemma_id, reports, extra=""):
    """One report for a whole campaign: the case with least slack."""
    worst = min(reports, key=lambda r: r.slack)
    fails = sum(not r.passed for r in reports)
    params = f"cases={len(reports)};failures={fails}" + (f";{extra}" if extra else "")
    return bp.LemmaReport(lemma_id, worst.lhs, worst.bound, params)


def _random_theta(rng, d, scale):
    return rng.normal(size=d) * scale * 10.0 ** rng.uniform(-2, 2)


def _random_transition(rng, chain):
    s = int(rng.integers(chain.n))
    s_next = int(rng.choice(chain.n, p=chain.p_mu[s]))
    return s, s_next, float(chain.reward_mu[s, s_next])


def oracle_checks(inst: Instance, oracle: TdOracle, rng, n_thetas: int) -> list:
    chain, features = inst.chain, inst.features
    d = features.d
    scale = 1.0 + float(np.linalg.norm(oracle.theta_star))
    reps = []

    split = []
    for _ in range(n_thetas):
        theta = _random_theta(rng, d, scale)
        f_val = potential(oracle, chain, features, theta)
        split.append(bp.LemmaReport("gradient_splitting",
                                    abs(gradient_splitting_residual(oracle, chain, features, theta)),
                                    SPLIT_TOL * (1.0 + abs(f_val))))
    reps.append(_fold("gradient_splitting", split))

    b_scale = max(1.0, float(np.max(np.abs(oracle.b_vec))))
    g_star = max(float(np.max(np.abs(stationary_gradient(oracle, oracle.theta_star)))),
                 float(np.max(np.abs(stationary_gradient_sum(chain, features, oracle.theta_star)))))
    reps.append(bp.LemmaReport("gbar_at_fixed_point", g_star, SPLIT_TOL * b_scale))

    resid = float(np.max(np.abs(oracle.a_matrix @ oracle.theta_star - oracle.b_vec)))
    reps.append(bp.LemmaReport("fixed_point_solve", resid, SOLVE_ATOL))
    v_star = features.phi @ oracle.theta_star
    gap = float(np.max(np.abs(projection_matrix(features, chain.require_pi()) @ bellman_apply(chain, v_star)
                              - v_star)))
    reps.append(bp.LemmaReport("projected_bellman", gap, PROJ_ATOL))
    if d == chain.n:
        vi = value_iteration(chain)
        reps.append(bp.LemmaReport("tabular_value_iteration", float(np.max(np.abs(vi - v_star))),
                                   TABULAR_ATOL * max(1.0, float(np.max(np.abs(vi))))))

    reps.append(bp.LemmaReport("hessian_fd", hessian_fd_error(oracle, inst), FD_RTOL))

    ratios = []
    for _ in range(n_thetas):
        v = rng.normal(size=chain.n) * scale
        w = rng.normal(size=chain.n) * scale
        lhs = float(np.max(np.abs(bellman_apply(chain, v) - bellman_apply(chain, w))))
        ratios.append(bp.LemmaReport("bellman_contraction", lhs / float(np.max(np.abs(v - w))), chain.gamma))
    reps.append(_fold("bellman_contraction", ratios))
    return reps


def lemma_fuzz(inst: Instance, oracle: TdOracle, mixing: MixingFit, rng, cases: int, xi_cases: int,
               k_max: int) -> list:
    chain, features = inst.chain, inst.features
    d = features.d
    scale = 1.0 + float(np.linalg.norm(oracle.theta_star))
    grad, lip_g, lip_bar, xi = [], [], [], []
    for i in range(cases):
        ta = _random_theta(rng, d, scale)
        tb = _random_theta(rng, d, scale)
        tr = _random_transition(rng, chain)
        grad.append(bp.gradient_bound_check(ta, tr, features, chain.r_inf, chain.gamma))
        a, b = bp.lipschitz_check(ta, tb, tr, chain, features)
        lip_g.append(a)
        lip_bar.append(b)
        if i < xi_cases:
            g_bound = bp.ell(ta, chain.r_inf, features.phi_inf)
            d_b = float(np.linalg.norm(tb - oracle.theta_star))
            xi.append(bp.xi_lipschitz_check(ta, tb, tr, g_bound, d_b, chain, features, oracle))
    tv = []
    for s in range(chain.n):
        theta = _random_theta(rng, d, scale)
        for k in range(min(k_max, mixing.horizon_used) + 1):
            tv.append(bp.tv_bias_check(theta, s, k, chain, features, oracle, mixing))
    return [_fold("gradient_bound", grad), _fold("lipschitz_g", lip_g), _fold("lipschitz_gbar", lip_bar),
            _fold("xi_lipschitz", xi), _fold("tv_bias", tv, f"kmax={k_max}")]


def sum_lemma_checks(ts: Iterable[int]) -> list:
    """a1/a2 on the (u, t) grid with ``u < t``; a3 at every ``t``."""
    reps = []
    for t in ts:
        for u in SUM_GRID_U:
            if u < t and t <= 10**5:
                reps.append(bp.lemma_sum_a1(u, t))
                reps.append(bp.lemma_sum_a2(u, t))
        reps.append(bp.lemma_sum_a3(t))
    return reps


def martingale_check(inst: Instance, oracle: TdOracle, seed: int, reps: int = 100, T: int = 1024,
                     c: float = 100.0) -> bp.LemmaReport:
    records = [run_td0(inst.chain, inst.features, oracle, TdConfig(c, T, seed + r), diagnostics=True)
               for r in range(reps)]
    stat = bp.martingale_sum_check(records)
    return bp.LemmaReport("martingale_z", abs(stat.z), Z_LIMIT,
                          f"z={stat.z!r};mean={stat.mean!r};stderr={stat.stderr!r};reps={reps};T={T}")


def run_suite(instances: Optional[list] = None, level: str = "fast", seed: int = 0) -> list:
    """Run the whole suite; ``instances=None`` means the built-in corpus.

    Returns ``(instance_name, LemmaReport)`` pairs; the sum lemmas use the
    name ``"-"``.
    """
    if level not in LEVELS:
        raise InvalidInputError(f"level must be one of {LEVELS}")
    budget = _BUDGET[level]
    instances = builtin_corpus() if instances is None else instances
    out = []
    for idx, inst in enumerate(instances):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(idx,)))
        try:
            oracle = solve_fixed_point(inst.chain, inst.features)
            mixing = estimate_mixing(inst.chain)
        except TdForgeError as exc:
            out.append((inst.name, bp.LemmaReport("oracle", math.inf, 0.0, str(exc).replace(",", ";"))))
            continue
        reps = oracle_checks(inst, oracle, rng, budget["thetas"])
        reps += lemma_fuzz(inst, oracle, mixing, rng, budget["fuzz"], budget["xi_fuzz"], budget["kmax"])
        if level == "full":
            reps.append(martingale_check(inst, oracle, seed=int(rng.integers(2**31))))
        out.extend((inst.name, r) for r in reps)
    out.extend(("-", r) for r in sum_lemma_checks(budget["sum_t"]))
    return out


def write_suite_csv(results, path) -> None:
    """LemmaReport CSV with the instance name folded into ``params``."""
    bp.write_reports_csv(
        [bp.LemmaReport(r.lemma_id, r.lhs, r.bound, f"instance={name}" + (f";{r.params}" if r.params else ""))
         for name, r in results], path)
