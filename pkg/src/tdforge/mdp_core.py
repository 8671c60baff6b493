"""Finite MDPs, policy-induced Markov chains and their mixing behaviour.

All objects are immutable; operations return new objects.  States are
0-based integers ``0..n-1``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import reduce
from typing import Optional

import numpy as np

from tdforge.errors import InvalidInputError, NumericalFailure
from tdforge import kernels

# log(1/alpha) must stay finite downstream, so exact mixing uses the smallest
# normal double instead of alpha = 0.
EXACT_MIXING_ALPHA = float(np.finfo(float).tiny)
MIX_FLOOR = 1e-12


def _check_stochastic_rows(p, tol, what):
    if np.any(p < 0):
        raise InvalidInputError(f"{what} has negative entries")
    worst = float(np.max(np.abs(p.sum(axis=-1) - 1.0)))
    if worst > tol:
        raise InvalidInputError(f"{what} rows must sum to 1 (worst deviation {worst:.3g} > {tol:g})")


@dataclass(frozen=True, eq=False)
class Mdp:
    """Discounted MDP with ``transition[s, a, s']`` and ``reward[s, a, s']``."""

    n_states: int
    n_actions: int
    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    row_tol: float = 1e-12

    def __post_init__(self):
        n, m = self.n_states, self.n_actions
        if n < 1 or m < 1:
            raise InvalidInputError("n_states and n_actions must be positive")
        p = np.asarray(self.transition, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        if p.shape != (n, m, n):
            raise InvalidInputError(f"transition has shape {p.shape}, expected {(n, m, n)}")
        if r.shape != (n, m, n):
            raise InvalidInputError(f"reward has shape {r.shape}, expected {(n, m, n)}")
        _check_stochastic_rows(p, self.row_tol, "transition")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise InvalidInputError("rewards must be finite and nonnegative")
        if not 0.0 < self.gamma < 1.0:
            raise InvalidInputError(f"gamma must lie in (0, 1), got {self.gamma}")
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary randomized policy, ``probs[s, a] = mu(a | s)``."""

    probs: np.ndarray
    row_tol: float = 1e-12

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2:
            raise InvalidInputError("policy must be a 2-d table")
        if np.any(p > 1.0):
            raise InvalidInputError("policy entries must lie in [0, 1]")
        _check_stochastic_rows(p, self.row_tol, "policy")
        object.__setattr__(self, "probs", p)


@dataclass(frozen=True, eq=False)
class InducedChain:
    """State-to-state chain obtained by marginalising actions under a policy.

    ``pi`` is ``None`` until :func:`with_stationary` (or
    :func:`stationary_distribution`) has been applied.
    """

    p_mu: np.ndarray
    reward_mu: np.ndarray
    r_inf: float
    gamma: float
    pi: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.p_mu.shape[0]

    def expected_reward(self) -> np.ndarray:
        """One-step expected reward ``sum_s' P(s, s') r(s, s')`` per state."""
        return (self.p_mu * self.reward_mu).sum(axis=1)

    def require_pi(self) -> np.ndarray:
        if self.pi is None:
            raise InvalidInputError("stationary distribution not computed; call with_stationary() first")
        return self.pi


@dataclass(frozen=True)
class MixingFit:
    """Geometric envelope ``max_s TV(P^t(s, .), pi) <= c_const * alpha**t``."""

    c_const: float
    alpha: float
    horizon_used: int
    max_residual: float
    exact: bool = False


def chain_from_matrix(p, reward=None, gamma=0.9) -> InducedChain:
    """Wrap a bare transition matrix (one-action MDP) as an induced chain."""
    p = np.asarray(p, dtype=float)
    n = p.shape[0]
    r = np.zeros((n, n)) if reward is None else np.asarray(reward, dtype=float)
    mdp = Mdp(n, 1, p[:, None, :], r[:, None, :], gamma)
    return induce_chain(mdp, Policy(np.ones((n, 1))))


def induce_chain(mdp: Mdp, policy: Policy) -> InducedChain:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidInputError(
            f"policy has shape {policy.probs.shape}, MDP needs {(mdp.n_states, mdp.n_actions)}"
        )
    mu = policy.probs
    p_mu = np.einsum("sa,sat->st", mu, mdp.transition)
    reward_mu = np.einsum("sa,sat->st", mu, mdp.reward)
    return InducedChain(p_mu, reward_mu, float(reward_mu.max()), float(mdp.gamma))


def _reachable(adj, start):
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    stack = [start]
    while stack:
        s = stack.pop()
        for t in np.flatnonzero(adj[s] & ~seen):
            seen[t] = True
            stack.append(t)
    return seen


def check_ergodic(chain: InducedChain) -> tuple[bool, str]:
    """Return ``(ok, diagnostic)`` for irreducibility and aperiodicity.

    Irreducibility is strong connectivity of the support graph.  The period
    is the gcd of all return times up to ``2n`` over all states; every simple
    cycle has length at most ``n``, so this recovers the true period.
    """
    adj = chain.p_mu > 0
    n = adj.shape[0]
    fwd = _reachable(adj, 0)
    bwd = _reachable(adj.T, 0)
    if not fwd.all():
        return False, f"not irreducible: state {int(np.flatnonzero(~fwd)[0])} unreachable from state 0"
    if not bwd.all():
        return False, f"not irreducible: state 0 unreachable from state {int(np.flatnonzero(~bwd)[0])}"

    a = adj.astype(np.int64)
    walk = np.eye(n, dtype=np.int64)
    returns = []
    for k in range(1, 2 * n + 1):
        walk = np.minimum(walk @ a, 1)
        if walk.diagonal().any():
            returns.append(k)
    period = reduce(math.gcd, returns, 0)
    if period != 1:
        return False, f"not aperiodic: period {period}"
    return True, "irreducible and aperiodic"


def stationary_distribution(chain: InducedChain, tol: float = 1e-10) -> np.ndarray:
    """Solve ``pi P = pi, sum(pi) = 1`` directly (no power iteration)."""
    p = chain.p_mu
    n = p.shape[0]
    system = np.vstack([p.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    residual = float(np.max(np.abs(pi @ p - pi)))
    if not np.isfinite(residual) or residual > tol or abs(pi.sum() - 1.0) > tol:
        raise NumericalFailure("stationary system is singular or ill-conditioned", residual)
    return pi


def with_stationary(chain: InducedChain, tol: float = 1e-10) -> InducedChain:
    """Return a copy of ``chain`` carrying its stationary distribution."""
    ok, why = check_ergodic(chain)
    if not ok:
        raise InvalidInputError(f"chain is not ergodic ({why})")
    return dataclasses.replace(chain, pi=stationary_distribution(chain, tol))


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InvalidInputError(f"length mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def tv_profile(chain: InducedChain, horizon: int) -> np.ndarray:
    """``m[t] = max_s TV(P^t(s, .), pi)`` for ``t = 0..horizon``."""
    pi = chain.require_pi()
    n = chain.n
    power = np.eye(n)
    out = np.empty(horizon + 1)
    for t in range(horizon + 1):
        out[t] = 0.5 * np.abs(power - pi).sum(axis=1).max()
        power = power @ chain.p_mu
    return out


def estimate_mixing(chain: InducedChain, horizon: int = 200) -> MixingFit:
    """Fit ``log m_t ~ log C + t log alpha`` then inflate C into an envelope.

    Chains that are already mixed at ``t = 1`` (``m_1 <= 1e-12``) get the
    exact-mixing sentinel ``alpha = EXACT_MIXING_ALPHA, C = 1``.
    """
    if horizon < 10:
        raise InvalidInputError("horizon must be at least 10")
    m = tv_profile(chain, horizon)
    ts = np.arange(horizon + 1)
    keep = m > MIX_FLOOR
    if m[1] <= MIX_FLOOR or keep.sum() < 2:
        return MixingFit(1.0, EXACT_MIXING_ALPHA, horizon, 0.0, exact=True)

    slope, intercept = np.polyfit(ts[keep], np.log(m[keep]), 1)
    # alpha must stay in (0, 1) even for fits polluted by a roundoff floor
    log_alpha = float(min(slope, math.log1p(-1e-12)))
    log_c = float(intercept)
    # smallest C with C alpha^t >= m_t on every sampled t
    log_c = max(log_c, float(np.max(np.log(m[keep]) - ts[keep] * log_alpha)))
    resid = np.log(m[keep]) - (intercept + slope * ts[keep])
    return MixingFit(math.exp(log_c), math.exp(log_alpha), horizon, float(np.max(np.abs(resid))))


def sample_trajectory(chain: InducedChain, s0: int, steps: int, seed: int):
    """Markov-sample ``steps`` transitions from ``s0``.

    Returns ``(states, next_states, rewards)``; ``O_t = (states[t], next_states[t])``.
    The path depends only on ``(chain, s0, steps, seed)``.
    """
    n = chain.n
    if not 0 <= s0 < n:
        raise InvalidInputError(f"s0={s0} outside [0, {n})")
    if steps < 0:
        raise InvalidInputError("steps must be nonnegative")
    rng = np.random.default_rng(seed)
    path = kernels.sample_path(cumulative_rows(chain.p_mu), int(s0), rng.random(steps))
    src, dst = path[:-1], path[1:]
    return src, dst, chain.reward_mu[src, dst]


def cumulative_rows(p: np.ndarray) -> np.ndarray:
    """Row-wise CDF, pinned to exactly 1 from each row's last positive entry.

    Pinning keeps ``u in [0, 1)`` from falling off the end through roundoff
    without ever selecting a zero-probability successor.
    """
    cum = np.cumsum(p, axis=1)
    for s in range(p.shape[0]):
        last = np.flatnonzero(p[s] > 0)[-1]
        cum[s, last:] = 1.0
    return np.ascontiguousarray(cum)
