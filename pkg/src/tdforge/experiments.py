"""Replicated runs, aggregation and parameter sweeps.

Seeds: replication ``r`` of cell ``i`` under base seed ``B`` uses
``SeedSequence(B, spawn_key=(i, r)).generate_state(1, uint64)[0]``.  Results
are collected in replication order, so outputs do not depend on the number
of worker threads (``TDFORGE_THREADS``).
"""
from __future__ import annotations

import dataclasses
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from tdforge.errors import InvalidInputError
from tdforge.instances import GeneratorSpec, Instance, generate, load_instance, parse_scheme
from tdforge.mdp_core import MixingFit, estimate_mixing
from tdforge.td_learner import (C_THRESHOLD, RunRecord, TdConfig, iterate_bound_check, min_T_condition,
                                omega_c, run_td0)
from tdforge.td_oracle import TdOracle, hessian_min_eigenvalue, solve_fixed_point

SWEEP_AXES = ("gamma", "eps", "mixing", "c", "T")
SWEEP_COLUMNS = ("f_bar_mean", "f_bar_stderr", "max_mean_theta_sq", "omega_bound", "ratio", "minT_ok",
                 "lambda_min", "status")


def derive_seed(base_seed: int, cell: int, rep: int) -> int:
    ss = np.random.SeedSequence(base_seed, spawn_key=(cell, rep))
    return int(ss.generate_state(1, np.uint64)[0])


def worker_count() -> int:
    raw = os.environ.get("TDFORGE_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise InvalidInputError(f"TDFORGE_THREADS must be an integer, got {raw!r}") from None
    return max(n, 1)


def run_replications(inst: Instance, oracle: Optional[TdOracle], c: float, T: int, reps: int,
                     base_seed: int, cell: int = 0, stride: int = 1, diagnostics: bool = False,
                     initial_state="stationary", threads: Optional[int] = None) -> list[RunRecord]:
    if reps < 1:
        raise InvalidInputError("need at least one replication")
    configs = [TdConfig(c, T, derive_seed(base_seed, cell, r), initial_state, stride) for r in range(reps)]

    def one(cfg):
        return run_td0(inst.chain, inst.features, oracle, cfg, diagnostics=diagnostics)

    threads = worker_count() if threads is None else threads
    if threads <= 1:
        return [one(cfg) for cfg in configs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, configs))


def _mean_stderr(x):
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def aggregate(records: list[RunRecord], inst: Instance, oracle: TdOracle, mixing: MixingFit) -> dict:
    """Replication summary of one (instance, c, T) cell."""
    cfg = records[0].config
    f_mean, f_err = _mean_stderr([r.f_bar for r in records])
    e_unw = [r.theta_bar_unweighted - oracle.theta_star for r in records]
    fu_mean, _ = _mean_stderr([0.5 * float(e @ oracle.hessian @ e) for e in e_unw])
    bound_rep = iterate_bound_check(records, oracle, inst.chain, inst.features, cfg)
    ok, margin = min_T_condition(mixing.c_const, mixing.alpha, cfg.total_steps, mixing.exact)
    max_mean_sq = float(np.max(bound_rep.mean_sq))
    return {
        "T": cfg.total_steps,
        "c": cfg.c_const,
        "reps": len(records),
        "f_bar_mean": f_mean,
        "f_bar_stderr": f_err,
        "f_bar_unweighted_mean": fu_mean,
        "max_mean_theta_sq": max_mean_sq,
        "omega_c": omega_c(cfg.c_const),
        "omega_bound": bound_rep.bound,
        "ratio": max_mean_sq / bound_rep.bound if bound_rep.bound > 0 else 0.0,
        "bound_pass": bound_rep.passed,
        "minT_ok": ok,
        "minT_margin": margin if math.isfinite(margin) else None,
        "sum_eta": records[0].sum_eta,
        "mixing": {"C": mixing.c_const, "alpha": mixing.alpha, "exact": mixing.exact},
        "oracle": oracle.summary(),
    }


@dataclass
class ExperimentConfig:
    """Everything ``run`` and ``sweep`` need; mirrors the JSON config file."""

    instance: Optional[str] = None
    generator: Optional[dict] = None
    c: float = 100.0
    T: list = field(default_factory=lambda: [1024])
    reps: int = 30
    seed: int = 0
    stride: int = 1
    out: str = "tdforge-out"
    axes: dict = field(default_factory=dict)
    formats: list = field(default_factory=lambda: ["csv", "json"])
    mixing_horizon: int = 200

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown config fields {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.instance is not None and self.generator is not None:
            raise InvalidInputError("give either an instance path or a generator spec, not both")
        if self.instance is not None and not os.path.exists(self.instance):
            raise InvalidInputError(f"instance file {self.instance} does not exist")
        if self.reps < 1:
            raise InvalidInputError("reps must be >= 1")
        if isinstance(self.T, int):
            self.T = [self.T]
        if not self.T or any(int(t) < 4 for t in self.T):
            raise InvalidInputError("every T must be >= 4")
        if self.stride < 1:
            raise InvalidInputError("stride must be >= 1")
        bad = set(self.axes) - set(SWEEP_AXES)
        if bad:
            raise InvalidInputError(f"unknown sweep axes {sorted(bad)}; allowed {SWEEP_AXES}")

    def generator_spec(self) -> Optional[GeneratorSpec]:
        return None if self.generator is None else GeneratorSpec.from_dict(self.generator)

    def base_instance(self) -> Instance:
        if self.instance is not None:
            return load_instance(self.instance)
        return generate(self.generator_spec() or GeneratorSpec())


@dataclass
class Prepared:
    inst: Instance
    oracle: TdOracle
    mixing: MixingFit


def prepare(inst: Instance, horizon: int = 200) -> Prepared:
    return Prepared(inst, solve_fixed_point(inst.chain, inst.features), estimate_mixing(inst.chain, horizon))


def run_experiment(cfg: ExperimentConfig, inst: Optional[Instance] = None, threads=None):
    """Run every T of the grid; cell ``i`` is the i-th T.  Returns (prepared, [(records, summary)])."""
    if cfg.c <= C_THRESHOLD:
        raise InvalidInputError(
            f"c={cfg.c} must exceed 30+sqrt(1302)={C_THRESHOLD:.4f}: the step-size schedule's "
            "guarantees require it")
    prep = prepare(inst or cfg.base_instance(), cfg.mixing_horizon)
    results = []
    for cell, T in enumerate(cfg.T):
        recs = run_replications(prep.inst, prep.oracle, cfg.c, int(T), cfg.reps, cfg.seed, cell,
                                cfg.stride, threads=threads)
        results.append((recs, aggregate(recs, prep.inst, prep.oracle, prep.mixing)))
    return prep, results


def rate_slope(summaries: list[dict]) -> Optional[float]:
    """Least-squares slope of log E f(theta_bar_T) against log T."""
    pts = [(s["T"], s["f_bar_mean"]) for s in summaries if s["f_bar_mean"] > 0]
    if len(pts) < 2:
        return None
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def _variant(base: Instance, spec: Optional[GeneratorSpec], gamma, eps, mix) -> Instance:
    if eps is None and mix is None:
        return base if gamma is None else base.with_gamma(gamma)
    if spec is None:
        raise InvalidInputError("eps and mixing axes need a generator spec, not an instance file")
    spec = dataclasses.replace(spec)
    if gamma is not None:
        spec.gamma = gamma
    if eps is not None:
        kind, args = parse_scheme(spec.features)
        if kind != "adversarial":
            raise InvalidInputError("eps axis needs adversarial features")
        spec.features = f"adversarial({eps}{',' + str(args[1]) if len(args) > 1 else ''})"
    if mix is not None:
        kind, _ = parse_scheme(spec.chain)
        if isinstance(mix, (list, tuple)):
            spec.chain = f"{kind}({','.join(str(m) for m in mix)})"
        else:
            spec.chain = f"{kind}({mix})"
    return generate(spec)


def sweep(cfg: ExperimentConfig, threads=None) -> list[dict]:
    """Cross product over the configured axes, one long-form row per cell.

    Axis order is ``gamma, eps, mixing, c, T``; absent axes take the base
    config's value.  Cells with an invalid ``c`` are flagged and skipped.
    """
    spec = cfg.generator_spec()
    base = cfg.base_instance()
    present = [a for a in SWEEP_AXES if a in cfg.axes]
    values = []
    for a in SWEEP_AXES:
        if a in cfg.axes:
            values.append(list(cfg.axes[a]))
        elif a == "c":
            values.append([cfg.c])
        elif a == "T":
            values.append(list(cfg.T[:1]))
        else:
            values.append([None])
    rows = []
    cache = {}
    for cell, (gamma, eps, mix, c, T) in enumerate(itertools.product(*values)):
        row = {a: v for a, v in zip(SWEEP_AXES, (gamma, eps, mix, c, T)) if a in present}
        key = (gamma, eps, repr(mix))
        if key not in cache:
            cache[key] = prepare(_variant(base, spec, gamma, eps, mix), cfg.mixing_horizon)
        prep = cache[key]
        lam = hessian_min_eigenvalue(prep.oracle)
        if not c > C_THRESHOLD:
            row.update({k: None for k in SWEEP_COLUMNS})
            row.update(lambda_min=lam, status=f"skipped: c <= {C_THRESHOLD:.4f}")
            rows.append(row)
            continue
        recs = run_replications(prep.inst, prep.oracle, float(c), int(T), cfg.reps, cfg.seed, cell,
                                cfg.stride, threads=threads)
        agg = aggregate(recs, prep.inst, prep.oracle, prep.mixing)
        row.update({k: agg[k] for k in SWEEP_COLUMNS if k in agg})
        row.update(lambda_min=lam, status="ok")
        rows.append(row)
    return rows
