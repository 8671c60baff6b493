"""``tdforge`` command line: generate, run, sweep, verify, report.

Exit codes are a stable contract: 0 success, 1 verification failure,
2 invalid input.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from typing import Optional

from tdforge import __version__
from tdforge.errors import TdForgeError
from tdforge.experiments import SWEEP_AXES, SWEEP_COLUMNS, ExperimentConfig, rate_slope, run_experiment, sweep
from tdforge.instances import GeneratorSpec, generate, load_instance
from tdforge.td_learner import write_record_csv

EXIT_OK, EXIT_VERIFY, EXIT_INPUT = 0, 1, 2
RATE_COLUMNS = ("T", "sum_eta", "f_bar_mean", "f_bar_stderr", "f_bar_unweighted_mean", "max_mean_theta_sq",
                "omega_bound", "ratio", "minT_ok", "minT_margin")
GENERATOR_FLAGS = ("n", "d", "gamma", "chain", "features", "n_actions", "reward_scale")


def _csv_value(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (list, tuple)):
        return ";".join(_csv_value(v) for v in x)
    return str(x)


def _write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_csv_value(row.get(c)) for c in columns])


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_T(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--T expects N[,N...], got {text!r}") from None


def _generator_from_args(args, base: Optional[dict] = None) -> Optional[dict]:
    given = {k: getattr(args, k) for k in GENERATOR_FLAGS if getattr(args, k, None) is not None}
    if not given and base is None:
        return None
    doc = dict(base or {})
    doc.update(given)
    if "seed" not in doc and getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    return doc


def _load_config(args) -> ExperimentConfig:
    doc = {}
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise TdForgeError("config file must hold a JSON object")
    for key in ("c", "reps", "seed", "stride", "out", "instance"):
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    if args.T is not None:
        doc["T"] = args.T
    gen = _generator_from_args(args, doc.get("generator"))
    if gen is not None and doc.get("instance") is None:
        doc["generator"] = gen
    return ExperimentConfig.from_dict(doc)


def cmd_generate(args) -> int:
    doc = {}
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh).get("generator", {})
    doc.update({k: getattr(args, k) for k in GENERATOR_FLAGS if getattr(args, k) is not None})
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.name is not None:
        doc["name"] = args.name
    inst = generate(GeneratorSpec.from_dict(doc))
    path = args.out or f"{inst.name}.json"
    if os.path.isdir(path):
        path = os.path.join(path, f"{inst.name}.json")
    inst.save(path)
    print(f"wrote {path} (n={inst.mdp.n_states}, d={inst.features.d}, gamma={inst.mdp.gamma})")
    return EXIT_OK


def _rate_rows(summaries):
    return [{k: s.get(k) for k in RATE_COLUMNS} for s in summaries]


def _print_rates(summaries, slope):
    print(f"{'T':>8} {'E f(theta_bar)':>16} {'stderr':>12} {'max E|theta|^2':>16} {'bound':>12}")
    for s in summaries:
        print(f"{s['T']:>8} {s['f_bar_mean']:>16.6e} {s['f_bar_stderr']:>12.3e} "
              f"{s['max_mean_theta_sq']:>16.6e} {s['omega_bound']:>12.4e}")
    if slope is not None:
        print(f"log-log slope of E f(theta_bar_T) vs T: {slope:.4f}")


def cmd_run(args) -> int:
    cfg = _load_config(args)
    prep, results = run_experiment(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    summaries = []
    for recs, summary in results:
        cell_dir = os.path.join(cfg.out, f"T{summary['T']}")
        os.makedirs(cell_dir, exist_ok=True)
        for r, rec in enumerate(recs):
            if "csv" in cfg.formats:
                write_record_csv(rec, os.path.join(cell_dir, f"rep{r:04d}.csv"))
            if "json" in cfg.formats:
                _dump_json(rec.summary(), os.path.join(cell_dir, f"rep{r:04d}.json"))
        summaries.append(summary)
    slope = rate_slope(summaries)
    config = dataclasses.asdict(cfg)
    config.pop("out")
    aggregate = {"instance": prep.inst.name, "config": config, "cells": summaries,
                 "slope": slope}
    _dump_json(aggregate, os.path.join(cfg.out, "aggregate.json"))
    _write_rows(os.path.join(cfg.out, "rates.csv"), RATE_COLUMNS, _rate_rows(summaries))
    _print_rates(summaries, slope)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    rows = sweep(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    columns = tuple(a for a in SWEEP_AXES if a in cfg.axes) + SWEEP_COLUMNS
    path = os.path.join(cfg.out, "sweep.csv")
    _write_rows(path, columns, rows)
    skipped = sum(r["status"] != "ok" for r in rows)
    print(f"wrote {path}: {len(rows)} cells, {skipped} skipped")
    return EXIT_OK


def cmd_verify(args) -> int:
    from tdforge.verify import run_suite, write_suite_csv

    instances = [load_instance(args.instance)] if args.instance else None
    results = run_suite(instances, args.level, args.seed or 0)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "lemma_reports.csv")
    write_suite_csv(results, path)
    failed = [(name, r) for name, r in results if not r.passed]
    for name, r in failed:
        print(f"FAIL {name} {r.lemma_id}: lhs={r.lhs!r} bound={r.bound!r} {r.params}")
    for name, r in results:
        if r.lemma_id == "martingale_z":
            print(f"martingale {name}: {r.params.split(';')[0]}")
    print(f"{len(results) - len(failed)}/{len(results)} checks passed; reports in {path}")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_report(args) -> int:
    run_dir = args.out or "."
    path = os.path.join(run_dir, "aggregate.json")
    if not os.path.exists(path):
        raise TdForgeError(f"{path} not found; run `tdforge run --out {run_dir}` first")
    with open(path) as fh:
        doc = json.load(fh)
    summaries = sorted(doc["cells"], key=lambda s: s["T"])
    rows = _rate_rows(summaries)
    for prev, row in zip([None] + rows[:-1], rows):
        row["local_slope"] = None
        if prev is not None and prev["f_bar_mean"] > 0 and row["f_bar_mean"] > 0:
            row["local_slope"] = (math.log(row["f_bar_mean"]) - math.log(prev["f_bar_mean"])) / (
                math.log(row["T"]) - math.log(prev["T"]))
    _write_rows(os.path.join(run_dir, "rate_table.csv"), RATE_COLUMNS + ("local_slope",), rows)
    _print_rates(summaries, rate_slope(summaries))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tdforge", description="Projection-free TD(0) experiments and checks")
    p.add_argument("--version", action="version", version=f"tdforge {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, run_like=False):
        sp.add_argument("--config", help="JSON file mirroring ExperimentConfig")
        sp.add_argument("--out", help="output file (generate) or directory")
        sp.add_argument("--seed", type=int, help="base seed")
        if run_like:
            sp.add_argument("--instance", help="instance JSON file")
            sp.add_argument("--reps", type=int, help="replications per cell")
            sp.add_argument("--T", type=_parse_T, help="horizon or comma-separated grid")
            sp.add_argument("--c", type=float, help="step-size constant, must exceed 30+sqrt(1302)")
            sp.add_argument("--stride", type=int, help="record every K-th step")

    def gen_flags(sp):
        sp.add_argument("--n", type=int, help="number of states")
        sp.add_argument("--d", type=int, help="feature dimension")
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--chain", help="random-dirichlet(c) | two-state(a,b) | permutation-mix(l)")
        sp.add_argument("--features", help="random-gaussian | tabular | adversarial(eps[,phi_inf])")
        sp.add_argument("--n-actions", dest="n_actions", type=int)
        sp.add_argument("--reward-scale", dest="reward_scale", type=float)

    g = sub.add_parser("generate", help="write a random instance file")
    common(g)
    gen_flags(g)
    g.add_argument("--name")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="replicated TD(0) runs over a T grid")
    common(r, run_like=True)
    gen_flags(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="cross-product sweep over gamma/eps/mixing/c/T")
    common(s, run_like=True)
    gen_flags(s)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="invariant and lemma suite")
    v.add_argument("--instance", help="instance JSON (default: built-in corpus)")
    v.add_argument("--level", choices=("fast", "full"), default="fast")
    v.add_argument("--out", help="directory for lemma_reports.csv")
    v.add_argument("--seed", type=int)
    v.set_defaults(func=cmd_verify)

    rep = sub.add_parser("report", help="rate table from a run directory's aggregate.json")
    rep.add_argument("--out", help="run directory")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TdForgeError, OSError, json.JSONDecodeError) as exc:
        print(f"tdforge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
