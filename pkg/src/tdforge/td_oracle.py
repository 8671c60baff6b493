"""Exact ground truth for small instances.

Builds the TD system ``A theta = b``, the Laplacian of the induced chain and
the Hessian of the potential ``f``, and evaluates the quantities that the
learner is measured against.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tdforge.errors import InvalidInputError, NumericalFailure
from tdforge.linear_approx import FeatureMap, dirichlet_seminorm_sq, weighted_norm_sq
from tdforge.mdp_core import InducedChain

SOLVE_TOL = 1e-10
PROJECTION_TOL = 1e-8
COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class TdOracle:
    a_matrix: np.ndarray
    b_vec: np.ndarray
    theta_star: np.ndarray
    d_diag: np.ndarray
    w_matrix: np.ndarray
    laplacian: np.ndarray
    hessian: np.ndarray
    gamma: float
    cond_a: float

    def summary(self) -> dict:
        """JSON-ready digest for experiment reports."""
        return {
            "theta_star": [float(x) for x in self.theta_star],
            "f_min_eig": hessian_min_eigenvalue(self),
            "cond_A": float(self.cond_a),
        }


def projection_matrix(features: FeatureMap, pi) -> np.ndarray:
    """D-weighted least-squares projection onto the column span of ``phi``."""
    phi = features.phi
    dphi = pi[:, None] * phi
    return phi @ np.linalg.solve(phi.T @ dphi, dphi.T)


def bellman_apply(chain: InducedChain, v) -> np.ndarray:
    """``(T v)(s) = sum_s' P(s,s') (r(s,s') + gamma v(s'))``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (chain.n,):
        raise InvalidInputError(f"value vector has shape {v.shape}, expected ({chain.n},)")
    return chain.expected_reward() + chain.gamma * (chain.p_mu @ v)


def value_iteration(chain: InducedChain, tol: float = 1e-13, max_iter: int = 1_000_000) -> np.ndarray:
    """Policy value ``V^mu`` by repeated Bellman backups (tabular reference)."""
    v = np.zeros(chain.n)
    for _ in range(max_iter):
        nv = bellman_apply(chain, v)
        if np.max(np.abs(nv - v)) <= tol * (1.0 - chain.gamma):
            return nv
        v = nv
    raise NumericalFailure("value iteration did not converge", float(np.max(np.abs(nv - v))))


def solve_fixed_point(chain: InducedChain, features: FeatureMap) -> TdOracle:
    pi = chain.require_pi()
    if features.n != chain.n:
        raise InvalidInputError(f"features cover {features.n} states, chain has {chain.n}")
    phi, p, gamma = features.phi, chain.p_mu, chain.gamma
    n = chain.n
    dm = np.diag(pi)
    a = phi.T @ dm @ (np.eye(n) - gamma * p) @ phi
    b = phi.T @ (pi * chain.expected_reward())
    cond = float(np.linalg.cond(a))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericalFailure("TD system matrix A is numerically singular", cond)
    theta_star = np.linalg.solve(a, b)

    scale = max(1.0, float(np.max(np.abs(b))), float(np.max(np.abs(a))) * float(np.max(np.abs(theta_star))))
    resid = float(np.max(np.abs(a @ theta_star - b)))
    if resid > SOLVE_TOL * scale:
        raise NumericalFailure("A theta* = b not satisfied", resid)

    v_star = phi @ theta_star
    proj_gap = float(np.max(np.abs(projection_matrix(features, pi) @ bellman_apply(chain, v_star) - v_star)))
    if proj_gap > PROJECTION_TOL * max(1.0, float(np.max(np.abs(v_star)))):
        raise NumericalFailure("projected Bellman equation not satisfied", proj_gap)

    w = 0.5 * (dm @ p + p.T @ dm)
    lap = dm - w
    hess = 2.0 * phi.T @ ((1.0 - gamma) * dm + gamma * lap) @ phi
    hess = 0.5 * (hess + hess.T)
    return TdOracle(a, b, theta_star, dm, w, lap, hess, gamma, cond)


def stationary_gradient(oracle: TdOracle, theta) -> np.ndarray:
    """Mean-path TD update ``b - A theta``."""
    return oracle.b_vec - oracle.a_matrix @ np.asarray(theta, dtype=float)


def stationary_gradient_sum(chain: InducedChain, features: FeatureMap, theta) -> np.ndarray:
    """Same quantity as :func:`stationary_gradient`, from the double-sum definition."""
    pi = chain.require_pi()
    phi = features.phi
    theta = np.asarray(theta, dtype=float)
    v = phi @ theta
    td_err = chain.reward_mu + chain.gamma * v[None, :] - v[:, None]
    weights = pi[:, None] * chain.p_mu
    return phi.T @ (weights * td_err).sum(axis=1)


def potential(oracle: TdOracle, chain: InducedChain, features: FeatureMap, theta) -> float:
    """``f = (1-gamma) ||V_theta - V*||_D^2 + gamma ||V_theta - V*||_Dir^2``."""
    diff = features.phi @ (np.asarray(theta, dtype=float) - oracle.theta_star)
    gamma = chain.gamma
    return (1.0 - gamma) * weighted_norm_sq(diff, chain.require_pi()) + gamma * dirichlet_seminorm_sq(diff, chain)


def potential_quadratic(oracle: TdOracle, theta) -> float:
    """``f`` through the Hessian quadratic form; cheap and vectorisable."""
    e = np.asarray(theta, dtype=float) - oracle.theta_star
    return 0.5 * float(e @ oracle.hessian @ e)


def gradient_splitting_residual(oracle: TdOracle, chain: InducedChain, features: FeatureMap, theta) -> float:
    """``<-gbar(theta), theta - theta*> - (f(theta) - f(theta*))``; zero in exact arithmetic."""
    theta = np.asarray(theta, dtype=float)
    lhs = float(-stationary_gradient(oracle, theta) @ (theta - oracle.theta_star))
    f_star = potential(oracle, chain, features, oracle.theta_star)
    return lhs - (potential(oracle, chain, features, theta) - f_star)


def hessian_min_eigenvalue(oracle: TdOracle) -> float:
    return float(np.linalg.eigvalsh(oracle.hessian)[0])
