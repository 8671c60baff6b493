"""Compare the compiled TD(0) kernels with their pure-Python twins.

Usage::

    python3 benchmarks/bench_kernels.py --T 16384 --repeat 5

Both backends run on the same sampled path.  The script reports the best
wall time per backend, the speedup, and whether the outputs are bitwise equal.
"""
import argparse
import time

import numpy as np

from tdforge import _kernels_py
from tdforge.instances import standard_instance
from tdforge.mdp_core import cumulative_rows
from tdforge.td_learner import DIAG_FIELDS, TdConfig, step_sizes
from tdforge.td_oracle import solve_fixed_point

try:
    from tdforge import _kernels as _compiled
except ImportError:
    _compiled = None

DIAG_WIDTH = len(DIAG_FIELDS)


def _td_args(inst, oracle, states, etas, stride, diagnostics):
    chain, features = inst.chain, inst.features
    d = features.d
    nrec = (len(etas) + stride - 1) // stride
    outs = (np.zeros((nrec, d)), np.zeros(nrec), np.zeros((nrec, DIAG_WIDTH)), np.zeros(d),
            np.zeros(d), np.zeros(d), np.zeros(DIAG_WIDTH))
    ins = (features.phi, states, np.ascontiguousarray(chain.reward_mu), float(chain.gamma), etas, stride,
           diagnostics, oracle.theta_star, chain.expected_reward(),
           np.ascontiguousarray(chain.p_mu @ features.phi), oracle.a_matrix, oracle.b_vec)
    return ins, outs


def best_time(fn, repeat):
    best = float("inf")
    result = None
    for _ in range(repeat):
        start = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - start)
    return best, result


def bench(backend, inst, oracle, T, stride, diagnostics, repeat, seed):
    rng = np.random.default_rng(seed)
    cum = cumulative_rows(inst.chain.p_mu)
    u = rng.random(T)
    etas = step_sizes(TdConfig(100.0, T), inst.features.phi_inf)
    t_path, states = best_time(lambda: backend.sample_path(cum, 0, u), repeat)
    states = np.ascontiguousarray(states, dtype=np.int64)

    def td():
        ins, outs = _td_args(inst, oracle, states, etas, stride, diagnostics)
        backend.td0_kernel(*ins, *outs)
        return outs

    t_td, outs = best_time(td, repeat)
    return t_path, t_td, states, outs


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=2**14)
    ap.add_argument("--stride", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--diagnostics", action="store_true")
    args = ap.parse_args(argv)

    inst = standard_instance()
    oracle = solve_fixed_point(inst.chain, inst.features)
    backends = [("python", _kernels_py)]
    if _compiled is None:
        print("compiled extension not built; timing the pure-Python backend only")
    else:
        backends.insert(0, ("cython", _compiled))

    print(f"standard instance n={inst.chain.n} d={inst.features.d}, T={args.T}, stride={args.stride}, "
          f"diagnostics={args.diagnostics}, best of {args.repeat}")
    print(f"{'backend':>8} {'sample_path s':>14} {'td0_kernel s':>13} {'steps/s':>12}")
    results = {}
    for name, mod in backends:
        t_path, t_td, states, outs = bench(mod, inst, oracle, args.T, args.stride, args.diagnostics,
                                           args.repeat, args.seed)
        results[name] = (t_path, t_td, states, outs)
        print(f"{name:>8} {t_path:>14.4f} {t_td:>13.4f} {args.T / t_td:>12.3e}")

    if len(results) == 2:
        (cp, ct, cs, co), (pp, pt, ps, po) = results["cython"], results["python"]
        same = np.array_equal(cs, ps) and all(np.array_equal(a, b) for a, b in zip(co, po))
        print(f"speedup: sample_path x{pp / cp:.1f}, td0_kernel x{pt / ct:.1f}; bitwise equal: {same}")


if __name__ == "__main__":
    main()
