"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--csv out.csv]

Each kernel runs on the same inputs under both implementations; the script
checks that the outputs agree and reports the best wall time of each.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time

import numpy as np

from compabs.config import benchmark_defaults
from compabs.growthbound import subgrid_lag_maxima
from compabs.kernels import implementations
from compabs.pipeline import run_pipeline
from compabs.relstore import FactoredComposed, prefix_sum
from compabs.sysmodel import logistic_subsystem


def _best(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def case_covering_lp(impl, rng, n_problems=300):
    probs = []
    for _ in range(n_problems):
        m = int(rng.integers(20, 60))
        A = np.abs(rng.normal(size=(m, 2)))
        b = A @ np.array([0.7, 0.2]) + 0.01 * rng.random(m)
        probs.append((A, b))

    def run():
        return np.array([impl.lexmin_cover(A, b, np.full(2, 1e6))[0] for A, b in probs])

    return run


def case_scp_batch_1d(impl, rng, n_cells=2000, m=12):
    sys_ = logistic_subsystem()
    x = rng.uniform(0, 32, (n_cells, 1)) + np.linspace(0, 1, m)[None, :]
    u = np.zeros(x.size)
    w = rng.uniform(0, 32, x.size)
    xn = sys_.simulate(np.clip(x.reshape(-1, 1), 0, 32), u[:, None], w[:, None]).reshape(n_cells, m)
    lag = subgrid_lag_maxima(xn)
    spacing = np.full(n_cells, 1.0 / m)

    def run():
        th, st = impl.scp_batch_1d(lag, spacing, 0.05, 1e6)
        return th

    return run


def _factored_instance():
    cfg = benchmark_defaults(2, 2).replace(sampling={"n_c": 30, "n_i": 2000})
    res = run_pipeline(cfg, None, stages=("subsystems", "interconnection"), jobs=1)
    return FactoredComposed(res.subsystems, res.interconnection, res.network.channels)


def case_cpre_factored(impl, rng, comp, n_cand=400):
    S = np.ascontiguousarray(rng.random(comp.n_states) < 0.8, dtype=np.uint8)
    P = prefix_sum(S, comp.counts)
    cand = np.ascontiguousarray(rng.choice(comp.n_states, n_cand, replace=False).astype(np.int64))
    wptr, widx = comp._wcsr(cand)

    def run():
        out = np.zeros(len(cand), dtype=np.uint8)
        first = np.zeros(len(cand), dtype=np.int64)
        impl.cpre_factored(cand, comp.counts, comp.sub_axes, comp.nu, comp.nw, comp.tab_off,
                           comp.lo, comp.hi, comp.blk_off, comp.blk, wptr, widx, S, P, comp.pstr,
                           out, first)
        return np.concatenate([out, first])

    return run


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", help="also write the table here")
    args = ap.parse_args(argv)

    impls = implementations()
    if "cython" not in impls:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
    comp = _factored_instance()
    cases = {
        "covering_lp": lambda impl, rng: case_covering_lp(impl, rng),
        "scp_batch_1d": lambda impl, rng: case_scp_batch_1d(impl, rng),
        "cpre_factored": lambda impl, rng: case_cpre_factored(impl, rng, comp),
    }
    rows = []
    for name, make in cases.items():
        times, outs = {}, {}
        for label, impl in impls.items():
            fn = make(impl, np.random.default_rng(args.seed))
            times[label], outs[label] = _best(fn, args.repeat)
        ref = outs["python"]
        agree = all(np.allclose(o, ref, atol=1e-9) for o in outs.values())
        t_py = times["python"]
        t_cy = times.get("cython", float("nan"))
        rows.append((name, t_py, t_cy, t_py / t_cy if "cython" in times else float("nan"), agree))

    print(f"{'kernel':<16}{'numpy [s]':>12}{'cython [s]':>12}{'speedup':>10}  agree")
    for name, t_py, t_cy, sp, ok in rows:
        print(f"{name:<16}{t_py:12.4f}{t_cy:12.4f}{sp:10.1f}  {ok}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kernel", "t_numpy", "t_cython", "speedup", "agree"])
            w.writerows(rows)
    return 0 if all(r[4] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
