"""Split TD updates into noise, Markovian bias and mean path, and check the
supporting inequalities numerically.

Conditional expectations are exact: given the current state ``s`` the next
state is distributed as ``P(s, .)``, so they are finite sums over ``s'``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from tdforge.errors import InvalidInputError
from tdforge.linear_approx import FeatureMap
from tdforge.mdp_core import MIX_FLOOR, InducedChain, MixingFit
from tdforge.td_learner import MIN_REPLICATIONS, RunRecord, TdConfig
from tdforge.td_oracle import TdOracle, stationary_gradient

SLACK_TOL = 1e-12
LEMMA_CSV_COLUMNS = ("lemma_id", "params", "lhs", "bound", "slack", "pass")


@dataclass(frozen=True)
class StepDecomposition:
    g_t: np.ndarray
    xi_t: np.ndarray
    b_t: np.ndarray
    gbar_t: np.ndarray
    s_t: int


@dataclass(frozen=True)
class LemmaReport:
    lemma_id: str
    lhs: float
    bound: float
    params: str = ""

    @property
    def slack(self) -> float:
        return self.bound - self.lhs

    @property
    def passed(self) -> bool:
        return self.slack >= -SLACK_TOL


def update_vector(theta, s, s_next, r, gamma, phi) -> np.ndarray:
    return (r + gamma * phi[s_next] @ theta - phi[s] @ theta) * phi[s]


def conditional_update_mean(theta, s: int, chain: InducedChain, features: FeatureMap) -> np.ndarray:
    """``E[g(theta, (s, s')) | s] = sum_s' P(s, s') g(theta, (s, s'))``."""
    phi = features.phi
    theta = np.asarray(theta, dtype=float)
    v = phi @ theta
    td_err = chain.reward_mu[s] + chain.gamma * v - v[s]
    return float(chain.p_mu[s] @ td_err) * phi[s]


def decompose_step(theta, s: int, transition, chain: InducedChain, features: FeatureMap,
                   oracle: TdOracle) -> StepDecomposition:
    src, dst, r = transition
    if src != s:
        raise InvalidInputError(f"transition starts at {src}, current state is {s}")
    theta = np.asarray(theta, dtype=float)
    g = update_vector(theta, src, dst, r, chain.gamma, features.phi)
    cond = conditional_update_mean(theta, s, chain, features)
    gbar = stationary_gradient(oracle, theta)
    return StepDecomposition(g, g - cond, cond - gbar, gbar, int(s))


def ell(theta, r_inf: float, phi_inf: float) -> float:
    return r_inf * phi_inf + 2.0 * phi_inf**2 * float(np.linalg.norm(theta))


def gradient_bound_check(theta, transition, features: FeatureMap, r_inf: float, gamma: float) -> LemmaReport:
    s, s_next, r = transition
    g = update_vector(np.asarray(theta, dtype=float), s, s_next, r, gamma, features.phi)
    return LemmaReport("gradient_bound", float(np.linalg.norm(g)), ell(theta, r_inf, features.phi_inf))


def _mean_path(chain, features, theta):
    pi = chain.require_pi()
    phi = features.phi
    v = phi @ theta
    td_err = chain.reward_mu + chain.gamma * v[None, :] - v[:, None]
    return phi.T @ (pi * (chain.p_mu * td_err).sum(axis=1))


def lipschitz_check(theta_a, theta_b, transition, chain: InducedChain, features: FeatureMap):
    """Both 2 phi_inf^2 Lipschitz bounds: per-outcome update and mean path."""
    s, s_next, r = transition
    ta = np.asarray(theta_a, dtype=float)
    tb = np.asarray(theta_b, dtype=float)
    phi = features.phi
    gap = float(np.linalg.norm(ta - tb))
    bound = 2.0 * features.phi_inf**2 * gap
    lhs_g = float(np.linalg.norm(update_vector(ta, s, s_next, r, chain.gamma, phi)
                                 - update_vector(tb, s, s_next, r, chain.gamma, phi)))
    lhs_bar = float(np.linalg.norm(_mean_path(chain, features, ta) - _mean_path(chain, features, tb)))
    return LemmaReport("lipschitz_g", lhs_g, bound), LemmaReport("lipschitz_gbar", lhs_bar, bound)


def xi_lipschitz_check(theta_a, theta_b, transition, g_bound: float, d_b: float, chain: InducedChain,
                       features: FeatureMap, oracle: TdOracle) -> LemmaReport:
    """``|Xi(a) - Xi(b)| <= (2 G + 4 phi_inf^2 d_b) |a - b|``.

    ``Xi(theta) = <h(theta) - gbar(theta), theta - theta*>`` is evaluated both
    for the sampled outcome (``h = g``) and for its conditional mean given the
    source state; the larger difference is reported.  ``g_bound`` must bound
    both ``|g(theta_a, O)|`` and ``|gbar(theta_a)|``, which the gradient bound
    ``ell(theta_a)`` does.
    """
    s, s_next, r = transition
    ta = np.asarray(theta_a, dtype=float)
    tb = np.asarray(theta_b, dtype=float)
    ts = oracle.theta_star

    def xi_outcome(th):
        g = update_vector(th, s, s_next, r, chain.gamma, features.phi)
        return float((g - stationary_gradient(oracle, th)) @ (th - ts))

    def xi_conditional(th):
        m = conditional_update_mean(th, s, chain, features)
        return float((m - stationary_gradient(oracle, th)) @ (th - ts))

    lhs = max(abs(xi_outcome(ta) - xi_outcome(tb)), abs(xi_conditional(ta) - xi_conditional(tb)))
    bound = (2.0 * g_bound + 4.0 * features.phi_inf**2 * d_b) * float(np.linalg.norm(ta - tb))
    return LemmaReport("xi_lipschitz", lhs, bound)


def tv_bias_check(theta, start_state: int, k_prime: int, chain: InducedChain, features: FeatureMap,
                  oracle: TdOracle, mixing: MixingFit) -> LemmaReport:
    """Bias of the update ``k'`` steps after a restart, against ``8 ell C alpha^k'``.

    The envelope is floored at the mixing estimator's roundoff level
    (``1e-12``): below it the computed ``P^k'(s, .) - pi`` is noise.
    """
    if k_prime < 0:
        raise InvalidInputError("k_prime must be nonnegative")
    pi = chain.require_pi()
    theta = np.asarray(theta, dtype=float)
    rho = np.linalg.matrix_power(chain.p_mu, k_prime)[start_state]
    phi = features.phi
    v = phi @ theta
    td_err = chain.reward_mu + chain.gamma * v[None, :] - v[:, None]
    per_state = (chain.p_mu * td_err).sum(axis=1)
    lhs = float(np.linalg.norm(phi.T @ ((rho - pi) * per_state)))
    envelope = max(mixing.c_const * mixing.alpha**k_prime, MIX_FLOOR)
    bound = 8.0 * ell(theta, chain.r_inf, features.phi_inf) * envelope
    return LemmaReport("tv_bias", lhs, bound, f"k'={k_prime}")


@dataclass(frozen=True)
class MartingaleStat:
    mean: float
    stderr: float
    z: float
    n: int
    warning: Optional[str] = None


def martingale_sum_check(records: Sequence[RunRecord]) -> MartingaleStat:
    """z-test for ``E[sum_k eta_k <xi_k, theta_k - theta*>] = 0`` across replications."""
    vals = np.array([r.diag_final[0] for r in records if r.diag_final is not None])
    if len(vals) != len(records) or not len(vals):
        raise InvalidInputError("every record needs diagnostics (run_td0(..., diagnostics=True))")
    n = len(vals)
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    z = 0.0 if stderr == 0.0 else mean / stderr
    warn = None if n >= MIN_REPLICATIONS else f"only {n} replications (< {MIN_REPLICATIONS})"
    return MartingaleStat(mean, stderr, z, n, warn)


def _sum_report(lemma_id, terms, bound, u, t):
    lhs = float(math.fsum(terms)) if len(terms) else 0.0
    return LemmaReport(lemma_id, lhs, bound, f"u={u};t={t}")


def lemma_sum_a1(u: int, t: int) -> LemmaReport:
    """``sum_{k=u+1}^{t-1} 1/(log(k+3) log(k-u+3) sqrt(k+1) sqrt(k-u+1)) <= 2/log 3``."""
    if not 0 <= u < t:
        raise InvalidInputError("need 0 <= u < t")
    k = np.arange(u + 1, t, dtype=float)
    terms = 1.0 / (np.log(k + 3) * np.log(k - u + 3) * np.sqrt(k + 1) * np.sqrt(k - u + 1))
    return _sum_report("sum_a1", terms, 2.0 / math.log(3.0), u, t)


def lemma_sum_a2(u: int, t: int) -> LemmaReport:
    """``sum_{k=u+1}^{t-1} 1/(log(k+3) sqrt(k+1) sqrt(t)) <= 2/log(u+4)``."""
    if not 0 <= u < t:
        raise InvalidInputError("need 0 <= u < t")
    k = np.arange(u + 1, t, dtype=float)
    terms = 1.0 / (np.log(k + 3) * np.sqrt(k + 1) * math.sqrt(t))
    return _sum_report("sum_a2", terms, 2.0 / math.log(u + 4.0), u, t)


def lemma_sum_a3(t: int) -> LemmaReport:
    """``sum_{k=0}^{t-1} 1/(log^2(k+3) (k+1)) <= 1/log^2 3 + 2/log 3``."""
    if t < 1:
        raise InvalidInputError("need t >= 1")
    k = np.arange(t, dtype=float)
    terms = 1.0 / (np.log(k + 3) ** 2 * (k + 1))
    bound = 1.0 / math.log(3.0) ** 2 + 2.0 / math.log(3.0)
    return _sum_report("sum_a3", terms, bound, "-", t)


def mixing_horizon(mixing: MixingFit, t: int) -> int:
    """Integer switch point ``floor(log(C sqrt t) / log(1/alpha))`` clipped to ``[0, t-1]``."""
    if mixing.exact:
        return 0
    u = math.log(mixing.c_const * math.sqrt(t)) / math.log(1.0 / mixing.alpha)
    return int(min(max(math.floor(u), 0), t - 1))


@dataclass
class BiasBudget:
    t: int
    u_t: int
    reports: list
    empirical: dict


def bias_budget_probe(records: Sequence[RunRecord], mixing: Optional[MixingFit], oracle: TdOracle,
                      chain: InducedChain, features: FeatureMap, config: TdConfig) -> BiasBudget:
    """Empirical bias and second-moment sums at ``t = T`` against their bounds.

    Needs ``record_stride == 1`` and diagnostics on every record.  Right-hand
    sides are evaluated with replication averages of the recorded ``|theta_k|``
    and ``d_k`` in place of worst-case constants.
    """
    if config.record_stride != 1:
        raise InvalidInputError("bias_budget_probe needs record_stride == 1")
    if any(r.diag_final is None for r in records):
        raise InvalidInputError("records need diagnostics")
    T = config.total_steps
    t = T
    phi_inf = features.phi_inf
    r_inf = chain.r_inf
    delta = config.delta(phi_inf)
    log_t = math.log(T)
    diag = np.stack([r.diag_final for r in records])
    emp = {name: float(diag[:, i].mean()) for i, name in enumerate(
        ("martingale", "bias", "xi_sq", "b_sq", "gbar_sq"))}

    norms = np.stack([r.theta_norm for r in records])            # (M, T): |theta_k|, k < T
    finals = np.array([np.linalg.norm(r.theta_final) for r in records])
    # |theta_{t-1}| for t = T is the last recorded norm
    m1 = float(norms[:, t - 1].mean())
    m2 = float((norms[:, t - 1] ** 2).mean())
    k = np.arange(t, dtype=float)
    weights = 1.0 / (np.log(k + 3) ** 2 * (k + 1))
    b_budget = (r_inf**2 * phi_inf**2 + 4 * r_inf * phi_inf**3 * m1 + 4 * phi_inf**4 * m2) \
        * float(weights.sum()) / (delta**2 * log_t**2)
    reports = [
        LemmaReport("variance_xi", emp["xi_sq"], 4.0 * b_budget, f"t={t}"),
        LemmaReport("variance_b", emp["b_sq"], 4.0 * b_budget, f"t={t}"),
        LemmaReport("variance_gbar", emp["gbar_sq"], b_budget, f"t={t}"),
    ]
    u_t = None
    if mixing is not None:
        u_t = mixing_horizon(mixing, t)
        dists = np.stack([r.dist_to_star for r in records])
        ells = r_inf * phi_inf + 2.0 * phi_inf**2 * norms
        bound = _bias_rhs(dists, ells, mixing.c_const, u_t, t, delta, log_t, phi_inf)
        reports.append(LemmaReport("bias", emp["bias"], bound, f"t={t};u_t={u_t}"))
    emp["mean_final_norm"] = float(finals.mean())
    return BiasBudget(t, u_t if u_t is not None else -1, reports, emp)


def _bias_rhs(dists, ells, c_mix, u, t, delta, log_t, phi_inf):
    """Four-term right-hand side of the bias bound, averaged over replications."""
    k = np.arange(t, dtype=float)
    base = 1.0 / (delta * log_t * np.log(k + 3) * np.sqrt(k + 1))
    head = slice(0, u + 1)
    tail = np.arange(u + 1, t)

    term1 = 8.0 * c_mix * float((dists[:, 0] * ells[:, 0]).mean()) * float(base[head].sum())

    lag = tail - u
    term2 = 8.0 * float((dists[:, lag] * ells[:, lag] * (base[tail] / math.sqrt(t))).sum(axis=1).mean())

    pref = 2.0 / (delta**2 * log_t**2)
    i = np.arange(1, t + 1, dtype=float)
    # inner_head[k] = sum_{i=1}^{k} ell_{i-1} / (log(i+2) sqrt(i))
    inner_head = np.concatenate(
        [np.zeros((ells.shape[0], 1)), np.cumsum(ells / (np.log(i + 2) * np.sqrt(i)), axis=1)], axis=1)
    kh = np.arange(0, u + 1)
    outer_head = (ells[:, kh] + 2.0 * phi_inf**2 * dists[:, [0]]) / (np.sqrt(kh + 1.0) * np.log(kh + 3.0))
    term3 = pref * float((outer_head * inner_head[:, kh]).sum(axis=1).mean())

    # inner_tail[k] = sum_{i=k-u+1}^{k} ell_{i-1} / sqrt(i)
    csum = np.concatenate([np.zeros((ells.shape[0], 1)), np.cumsum(ells / np.sqrt(i), axis=1)], axis=1)
    if len(tail):
        inner_tail = csum[:, tail] - csum[:, tail - u]
        kt = tail.astype(float)
        outer_tail = (ells[:, tail] + 2.0 * phi_inf**2 * dists[:, lag]) / (
            np.log(kt + 3) * np.log(kt - u + 3) * np.sqrt(kt + 1))
        term4 = pref * float((outer_tail * inner_tail).sum(axis=1).mean())
    else:
        term4 = 0.0
    return term1 + term2 + term3 + term4


def write_reports_csv(reports: Sequence[LemmaReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEMMA_CSV_COLUMNS)
        for rep in reports:
            w.writerow([rep.lemma_id, rep.params, repr(float(rep.lhs)), repr(float(rep.bound)),
                        repr(float(rep.slack)), "true" if rep.passed else "false"])
