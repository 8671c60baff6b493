"""Projection-free TD(0) with the horizon-aware step-size schedule.

Natural logarithms are used throughout.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from tdforge import kernels
from tdforge.errors import InvalidInputError
from tdforge.linear_approx import FeatureMap
from tdforge.mdp_core import InducedChain, check_ergodic, cumulative_rows
from tdforge.td_oracle import TdOracle

C_THRESHOLD = 30.0 + math.sqrt(1302.0)
MIN_REPLICATIONS = 30
DIAG_FIELDS = ("martingale", "bias", "xi_sq", "b_sq", "gbar_sq")
CSV_COLUMNS = ("t", "eta", "theta_norm", "dist_to_star", "f_value", "grad_norm", "ell")


@dataclass(frozen=True)
class TdConfig:
    c_const: float
    total_steps: int
    seed: int = 0
    initial_state: Union[int, str] = "stationary"
    record_stride: int = 1

    def __post_init__(self):
        if not self.c_const > C_THRESHOLD:
            raise InvalidInputError(
                f"c={self.c_const} is not above 30+sqrt(1302)={C_THRESHOLD:.4f}; "
                "the step-size schedule carries no guarantee there"
            )
        if self.total_steps < 4:
            raise InvalidInputError("total_steps must be at least 4 so that log T > 1")
        if self.record_stride < 1:
            raise InvalidInputError("record_stride must be >= 1")
        if self.initial_state != "stationary" and not (
            isinstance(self.initial_state, (int, np.integer)) and self.initial_state >= 0
        ):
            raise InvalidInputError("initial_state must be a state index or 'stationary'")

    def delta(self, phi_inf: float) -> float:
        return self.c_const * phi_inf**2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(eq=False)
class RunRecord:
    """Trajectory statistics at recorded steps ``t = 0, k, 2k, ... < T``."""

    t: np.ndarray
    eta: np.ndarray
    theta_norm: np.ndarray
    grad_norm: np.ndarray
    ell: np.ndarray
    thetas: np.ndarray
    theta_bar: np.ndarray
    theta_bar_unweighted: np.ndarray
    theta_final: np.ndarray
    sum_eta: float
    seed: int
    config: TdConfig
    dist_to_star: Optional[np.ndarray] = None
    f_value: Optional[np.ndarray] = None
    f_bar: Optional[float] = None
    diag: Optional[np.ndarray] = None
    diag_final: Optional[np.ndarray] = None

    def summary(self) -> dict:
        return {
            "theta_bar": [float(x) for x in self.theta_bar],
            "sum_eta": float(self.sum_eta),
            "f_bar": None if self.f_bar is None else float(self.f_bar),
            "seed": int(self.seed),
            "config": self.config.to_dict(),
        }


def step_size(t: int, config: TdConfig, phi_inf: float) -> float:
    """``1 / (c phi_inf^2 log T log(t+3) sqrt(t+1))``."""
    if not 0 <= t < config.total_steps:
        raise InvalidInputError(f"t={t} outside [0, {config.total_steps})")
    return 1.0 / (
        config.c_const * phi_inf**2 * math.log(config.total_steps) * math.log(t + 3) * math.sqrt(t + 1)
    )


def step_sizes(config: TdConfig, phi_inf: float) -> np.ndarray:
    t = np.arange(config.total_steps, dtype=float)
    return 1.0 / (config.c_const * phi_inf**2 * math.log(config.total_steps) * np.log(t + 3) * np.sqrt(t + 1))


def td_update(theta, transition, gamma: float, eta: float, features: FeatureMap):
    """One TD(0) step.  Returns ``(theta_next, g)``."""
    s, s_next, r = transition
    phi = features.phi
    theta = np.asarray(theta, dtype=float)
    g = (r + gamma * phi[s_next] @ theta - phi[s] @ theta) * phi[s]
    return theta + eta * g, g


def _initial_state(config, chain, rng):
    if config.initial_state == "stationary":
        cdf = np.cumsum(chain.require_pi())
        return int(min(np.searchsorted(cdf, rng.random(), side="right"), chain.n - 1))
    s0 = int(config.initial_state)
    if s0 >= chain.n:
        raise InvalidInputError(f"initial_state {s0} outside [0, {chain.n})")
    return s0


def run_kernel(chain, features, etas, states, stride=1, oracle=None, diagnostics=False):
    """Drive the compiled/pure TD loop over a pre-sampled state path.

    ``states`` has ``len(etas) + 1`` entries.  Returns a dict of raw arrays.
    """
    T = len(etas)
    d = features.d
    nrec = (T + stride - 1) // stride
    out = {
        "thetas": np.zeros((nrec, d)),
        "gnorm": np.zeros(nrec),
        "diag": np.zeros((nrec, len(DIAG_FIELDS))),
        "theta_final": np.zeros(d),
        "wsum": np.zeros(d),
        "usum": np.zeros(d),
        "diag_final": np.zeros(len(DIAG_FIELDS)),
    }
    if diagnostics:
        if oracle is None:
            raise InvalidInputError("diagnostics need an oracle")
        theta_star = oracle.theta_star
        rbar = chain.expected_reward()
        next_phi = chain.p_mu @ features.phi
        a_mat, b_vec = oracle.a_matrix, oracle.b_vec
    else:
        theta_star = rbar = b_vec = np.zeros(max(d, chain.n))
        next_phi = a_mat = np.zeros((max(d, chain.n), d))
    kernels.td0_kernel(
        features.phi, np.ascontiguousarray(states, dtype=np.int64), np.ascontiguousarray(chain.reward_mu),
        float(chain.gamma), np.ascontiguousarray(etas, dtype=float), int(stride), bool(diagnostics),
        np.ascontiguousarray(theta_star), np.ascontiguousarray(rbar),
        np.ascontiguousarray(next_phi), np.ascontiguousarray(a_mat), np.ascontiguousarray(b_vec),
        out["thetas"], out["gnorm"], out["diag"], out["theta_final"],
        out["wsum"], out["usum"], out["diag_final"],
    )
    return out


def run_td0(chain: InducedChain, features: FeatureMap, oracle: Optional[TdOracle], config: TdConfig,
            diagnostics: bool = False) -> RunRecord:
    """Run TD(0) from ``theta_0 = 0`` for exactly ``T`` updates.

    With ``diagnostics`` (needs ``oracle``) the running sums of
    ``eta<xi, theta-theta*>``, ``eta<b, theta-theta*>``, ``eta^2|xi|^2``,
    ``eta^2|b|^2`` and ``eta^2|gbar|^2`` are recorded alongside.
    """
    ok, why = check_ergodic(chain)
    if not ok:
        raise InvalidInputError(f"chain is not ergodic ({why})")
    chain.require_pi()
    T = config.total_steps
    phi_inf = features.phi_inf
    rng = np.random.default_rng(config.seed)
    s0 = _initial_state(config, chain, rng)
    states = kernels.sample_path(cumulative_rows(chain.p_mu), s0, rng.random(T))
    etas = step_sizes(config, phi_inf)
    raw = run_kernel(chain, features, etas, states, config.record_stride, oracle, diagnostics)

    ts = np.arange(0, T, config.record_stride)
    thetas = raw["thetas"]
    theta_norm = np.linalg.norm(thetas, axis=1)
    sum_eta = float(np.sum(etas))
    rec = RunRecord(
        t=ts,
        eta=etas[ts],
        theta_norm=theta_norm,
        grad_norm=raw["gnorm"],
        ell=chain.r_inf * phi_inf + 2.0 * phi_inf**2 * theta_norm,
        thetas=thetas,
        theta_bar=raw["wsum"] / sum_eta,
        theta_bar_unweighted=raw["usum"] / T,
        theta_final=raw["theta_final"],
        sum_eta=sum_eta,
        seed=config.seed,
        config=config,
    )
    if oracle is not None:
        err = thetas - oracle.theta_star
        rec.dist_to_star = np.linalg.norm(err, axis=1)
        rec.f_value = 0.5 * np.einsum("ij,jk,ik->i", err, oracle.hessian, err)
        e_bar = rec.theta_bar - oracle.theta_star
        rec.f_bar = 0.5 * float(e_bar @ oracle.hessian @ e_bar)
    if diagnostics:
        rec.diag = raw["diag"]
        rec.diag_final = raw["diag_final"]
    return rec


def omega_c(c: float) -> float:
    """Iterate-bound constant; finite only for ``c > 30 + sqrt(1302)``."""
    if not c > C_THRESHOLD:
        raise InvalidInputError(f"omega_c undefined for c={c} <= {C_THRESHOLD:.4f}")
    first = (2 * c**2 + 72 * c + 417) / (2 * c**2 - 120 * c - 804)
    radicand = (4 * c**4 + 504 * c**3 - 5668 * c**2 - 53184 * c - 2991) / (4 * (c**2 - 60 * c - 402) ** 2)
    return first + math.sqrt(radicand)


def min_T_condition(c_mix: float, alpha: float, T: int, exact: bool = False) -> tuple[bool, float]:
    """Horizon requirement ``log T >= max{C sqrt(u+1), (u+1)^(3/4)}``.

    ``u = log(C sqrt T) / log(1/alpha)``.  Returns ``(holds, margin)``.
    Exact-mixing chains satisfy it trivially.
    """
    if exact:
        return True, math.inf
    if not c_mix > 0 or not 0 < alpha < 1:
        raise InvalidInputError("need C > 0 and 0 < alpha < 1")
    u = math.log(c_mix * math.sqrt(T)) / math.log(1.0 / alpha)
    need = max(c_mix * math.sqrt(max(u + 1.0, 0.0)), max(u + 1.0, 0.0) ** 0.75)
    margin = math.log(T) - need
    return margin >= 0, margin


@dataclass
class IterateBoundReport:
    t: np.ndarray
    mean_sq: np.ndarray
    stderr_sq: np.ndarray
    bound: float
    worst_ratio: float
    passed: Optional[bool]
    warning: Optional[str] = None


def iterate_bound_check(records: Sequence[RunRecord], oracle: TdOracle, chain: InducedChain,
                        features: FeatureMap, config: TdConfig) -> IterateBoundReport:
    """Compare the across-replication mean of ``|theta_t|^2`` to ``omega_c^2 max{r^2/phi^2, |theta*|^2}``.

    Pass means ``mean + 2 stderr <= bound`` at every recorded step.
    """
    if not records:
        raise InvalidInputError("no records")
    sq = np.stack([r.theta_norm**2 for r in records])
    m = sq.shape[0]
    mean = sq.mean(axis=0)
    stderr = sq.std(axis=0, ddof=1) / math.sqrt(m) if m > 1 else np.zeros_like(mean)
    bound = omega_c(config.c_const) ** 2 * max(
        (chain.r_inf / features.phi_inf) ** 2, float(oracle.theta_star @ oracle.theta_star)
    )
    upper = mean + 2.0 * stderr
    worst = float(np.max(upper) / bound) if bound > 0 else (0.0 if np.max(upper) == 0 else math.inf)
    if m < MIN_REPLICATIONS:
        return IterateBoundReport(records[0].t, mean, stderr, bound, worst, None,
                                  f"only {m} replications (< {MIN_REPLICATIONS}); no verdict")
    return IterateBoundReport(records[0].t, mean, stderr, bound, worst, bool(np.all(upper <= bound)))


def _cell(x):
    return "" if x is None else repr(float(x))


def write_record_csv(record: RunRecord, path) -> None:
    """One row per recorded step; oracle-dependent columns are empty without an oracle."""
    n = len(record.t)
    dist = record.dist_to_star if record.dist_to_star is not None else [None] * n
    fval = record.f_value if record.f_value is not None else [None] * n
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i in range(n):
            w.writerow([int(record.t[i]), _cell(record.eta[i]), _cell(record.theta_norm[i]), _cell(dist[i]),
                        _cell(fval[i]), _cell(record.grad_norm[i]), _cell(record.ell[i])])
