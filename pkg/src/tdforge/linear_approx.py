"""Linear value-function architecture and the norms used to measure it."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from tdforge.errors import InvalidInputError, RankDeficientError
from tdforge.mdp_core import InducedChain

RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Feature matrix ``phi`` (row ``s`` is the feature vector of state ``s``)."""

    phi: np.ndarray
    phi_inf: float
    rank_ok: bool

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    @property
    def d(self) -> int:
        return self.phi.shape[1]


def build_feature_map(phi_matrix) -> FeatureMap:
    """Validate full column rank and compute the largest row norm.

    Rank is certified with a relative singular-value test,
    ``sigma_min / sigma_max > 1e-10``, so it is independent of feature scale.
    """
    phi = np.ascontiguousarray(np.asarray(phi_matrix, dtype=float))
    if phi.ndim != 2:
        raise InvalidInputError("feature matrix must be 2-d")
    n, d = phi.shape
    if not n >= d >= 1:
        raise InvalidInputError(f"need n >= d >= 1, got n={n}, d={d}")
    if not np.all(np.isfinite(phi)):
        raise InvalidInputError("feature matrix has non-finite entries")
    sv = np.linalg.svd(phi, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] <= RANK_RTOL * sv[0]:
        raise RankDeficientError(
            f"feature matrix is rank deficient (sigma_min={sv[-1]:.3g}, sigma_max={sv[0]:.3g})",
            float(sv[-1]),
        )
    phi_inf = float(np.max(np.linalg.norm(phi, axis=1)))
    return FeatureMap(phi, phi_inf, True)


def value_of(features: FeatureMap, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (features.d,):
        raise InvalidInputError(f"theta has shape {theta.shape}, expected ({features.d},)")
    return features.phi @ theta


def weighted_norm_sq(v, pi) -> float:
    """``sum_s pi(s) v(s)^2``."""
    v = np.asarray(v, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if v.shape != pi.shape:
        raise InvalidInputError(f"length mismatch: {v.shape} vs {pi.shape}")
    return float(np.dot(pi, v * v))


def dirichlet_seminorm_sq(v, chain: InducedChain) -> float:
    """``1/2 sum_{s,s'} pi(s) P(s,s') (v(s') - v(s))^2``; zero on constants."""
    pi = chain.require_pi()
    v = np.asarray(v, dtype=float)
    if v.shape != pi.shape:
        raise InvalidInputError(f"length mismatch: {v.shape} vs {pi.shape}")
    diff = v[None, :] - v[:, None]
    return 0.5 * float(np.sum(pi[:, None] * chain.p_mu * diff * diff))


def adversarial_features(n: int, d: int, eps: float, phi_inf: float = 1.0) -> FeatureMap:
    """Features whose potential has curvature of order ``eps**2``.

    Row 0 is ``phi_inf / sqrt(2) * (e_1 - e_2)``, rows ``1..d-1`` are
    ``eps * e_2 .. eps * e_d`` and the remaining ``n - d`` rows are zero, so
    ``phi @ ones(d) = (0, eps, ..., eps, 0, ...)``.
    """
    if not n > d >= 2:
        raise InvalidInputError(f"need n > d >= 2, got n={n}, d={d}")
    if not eps < phi_inf:
        raise InvalidInputError("need eps < phi_inf")
    if eps < 0:
        raise InvalidInputError("eps must be nonnegative")
    phi = np.zeros((n, d))
    phi[0, 0] = phi_inf / math.sqrt(2.0)
    phi[0, 1] = -phi_inf / math.sqrt(2.0)
    phi[1:d, 1:d] = eps * np.eye(d - 1)
    return build_feature_map(phi)
