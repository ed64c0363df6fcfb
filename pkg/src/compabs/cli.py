"""Command-line front end.

Exit codes: 0 on success, 2 when a soundness check finds violations, 1 on
any other error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, benchmark_defaults, load_config
from .formats import ensure_dir
from .lipschitz import interconnection_lipschitz, subsystem_lipschitz
from .pipeline import (
    PHASES,
    PipelineError,
    linear_fit_r2,
    network_from_config,
    run_pipeline,
    scaling_sweep,
    subsystem_grids,
)

log = logging.getLogger("compabs")

EXIT_OK, EXIT_ERROR, EXIT_UNSOUND = 0, 1, 2


# ---------------------------------------------------------------------------
# argument handling

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML or JSON run configuration")
    p.add_argument("--benchmark", type=int, choices=(1, 2), help="benchmark defaults (ignored with --config)")
    p.add_argument("--n", type=int, help="number of subsystems")
    p.add_argument("--out", type=Path, default=Path("out"), help="artifact directory")
    p.add_argument("--jobs", type=int, default=0, help="worker threads (0: available parallelism)")
    p.add_argument("--seed", type=int, help="sampling seed")
    p.add_argument("--backend", choices=("auto", "explicit", "bdd", "factored"))
    p.add_argument("--reuse", action="store_true", help="load existing artifacts instead of rebuilding")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="compabs", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("abstract", help="abstract every subsystem and store the relations")
    _common(p)
    p.add_argument("--dump-theta", action="store_true", help="write per-cell growth-bound parameters")

    p = sub.add_parser("interconnect", help="learn and abstract the interconnection map")
    _common(p)

    p = sub.add_parser("compose", help="compose subsystem and interconnection abstractions")
    _common(p)

    p = sub.add_parser("synthesize", help="reach-and-stay controller plus seeded rollouts")
    _common(p)
    p.add_argument("--horizon", type=int)
    p.add_argument("--rollouts", type=int)

    p = sub.add_parser("simulate", help="closed-loop rollouts from a stored controller")
    _common(p)
    p.add_argument("--controller", type=Path, help="controller file (default OUT/controller.bin)")
    p.add_argument("--horizon", type=int)
    p.add_argument("--rollouts", type=int)
    p.add_argument("--x0", type=float, nargs="+", help="initial state (one value per subsystem)")
    p.add_argument("--inactive", action="store_true", help="apply u = 0 instead of the controller")

    p = sub.add_parser("lipschitz", help="Lipschitz estimates as CSV (location, scale, shape)")
    _common(p)
    p.add_argument("--argument", choices=("x", "w", "xw", "M"), default="x",
                   help="subsystem argument, or M for the interconnection map")
    p.add_argument("--subsystem", type=int, default=0)
    p.add_argument("--csv", type=Path, help="write here instead of stdout")

    p = sub.add_parser("sweep", help="pipeline timings over several network sizes")
    _common(p)
    p.add_argument("--n-list", default="4,8,16,32", help="comma-separated sizes")

    p = sub.add_parser("check", help="Monte-Carlo soundness checks of all abstractions")
    _common(p)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--cells", type=int, default=5, help="cells per subsystem for the growth-bound check")
    p.add_argument("--pairs", type=int, default=1000)

    p = sub.add_parser("config", help="show configuration")
    p.add_argument("--print-defaults", action="store_true")
    p.add_argument("--benchmark", type=int, choices=(1, 2), default=2)
    p.add_argument("--n", type=int)
    p.add_argument("--json", action="store_true")
    return ap


def resolve_config(args) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = benchmark_defaults(args.benchmark or 2, args.n)
    over: dict = {}
    if args.n is not None:
        over["network"] = {"n": args.n}
    if args.seed is not None:
        over["sampling"] = {"seed": args.seed}
    if args.backend is not None:
        over["backend"] = args.backend
    if args.jobs:
        over["jobs"] = args.jobs
    syn = {}
    for k in ("horizon", "rollouts"):
        if getattr(args, k, None) is not None:
            syn[k] = getattr(args, k)
    if args.command == "synthesize":
        syn["enabled"] = True
    if syn:
        over["synthesis"] = syn
    return cfg.replace(**over) if over else cfg


def _needed(out: Path, cfg: RunConfig, reuse: bool, final: tuple) -> tuple:
    """Stages to run so that ``final`` can execute on top of stored artifacts."""
    stages = list(final)
    have_subs = all((out / f"sub_{i}.rel").exists() for i in range(cfg.network.n))
    if not (reuse and have_subs):
        stages.insert(0, "subsystems")
    if not (reuse and (out / "interconnection.rel").exists()):
        stages.insert(1 if "subsystems" in stages else 0, "interconnection")
    return tuple(stages)


def _report(res) -> None:
    print(json.dumps({"timings": res.timings, **{k: v for k, v in res.summary.items() if k != "timings"}},
                     indent=2, sort_keys=True, default=str))


# ---------------------------------------------------------------------------
# commands

def cmd_abstract(args, cfg) -> int:
    res = run_pipeline(cfg, args.out, stages=("subsystems",), jobs=args.jobs or None,
                       dump_theta=args.dump_theta)
    _report(res)
    return EXIT_OK


def cmd_interconnect(args, cfg) -> int:
    res = run_pipeline(cfg, args.out, stages=("interconnection",), jobs=args.jobs or None)
    _report(res)
    return EXIT_OK


def cmd_compose(args, cfg) -> int:
    stages = _needed(args.out, cfg, args.reuse, ("composition",))
    res = run_pipeline(cfg, args.out, stages=stages, jobs=args.jobs or None, reuse=args.reuse)
    _report(res)
    return EXIT_OK


def cmd_synthesize(args, cfg) -> int:
    stages = _needed(args.out, cfg, args.reuse, ("composition", "synthesis"))
    res = run_pipeline(cfg, args.out, stages=stages, jobs=args.jobs or None, reuse=args.reuse)
    _report(res)
    syn = res.summary.get("synthesis", {})
    if syn.get("refinement_violations", 0) > 0:
        return EXIT_UNSOUND
    return EXIT_OK


def cmd_simulate(args, cfg) -> int:
    from .synthesis import (
        RefinementViolation,
        StoredController,
        build_consensus_target,
        open_loop_rollout,
        refine_and_rollout,
        sample_domain_states,
    )

    sy = cfg.synthesis
    path = args.controller or args.out / "controller.bin"
    ctrl = StoredController.load(path)
    net = network_from_config(cfg)
    grid = ctrl.comp.state_grid
    if grid.dim != net.n:
        raise ConfigError(f"controller is for {grid.dim} subsystems, config has {net.n}")
    target = build_consensus_target(grid, sy.radius, np.arange(sy.center_min, sy.center_max + 1),
                                    sy.strict, materialize=False)
    rdir = ensure_dir(args.out / "rollouts")
    if args.x0 is not None:
        x0s = np.atleast_2d(np.asarray(args.x0, dtype=float))
    elif sy.x0:
        x0s = np.atleast_2d(np.asarray(sy.x0, dtype=float))
    else:
        x0s = sample_domain_states(ctrl, net, sy.rollouts, cfg.sampling.seed)
    sat = viol = 0
    for k, x0 in enumerate(x0s):
        seed = cfg.sampling.seed + k
        if args.inactive:
            r = open_loop_rollout(net, x0, 0.0, sy.horizon, target)
            r.to_csv(rdir / f"inactive_{k:03d}.csv")
        else:
            try:
                r = refine_and_rollout(ctrl, net, x0, sy.horizon, seed, target)
            except RefinementViolation as e:
                log.error("rollout %d: %s", k, e)
                viol += 1
                continue
            r.to_csv(rdir / f"rollout_{k:03d}.csv")
        sat += bool(r.satisfied)
    print(json.dumps({"rollouts": len(x0s), "satisfied": sat, "refinement_violations": viol}))
    return EXIT_UNSOUND if viol else EXIT_OK


def cmd_lipschitz(args, cfg) -> int:
    lp = cfg.lipschitz
    net = network_from_config(cfg)
    rows = []
    if args.argument == "M":
        est = interconnection_lipschitz(net.interconnection, lp.delta, lp.batches, lp.pairs, cfg.sampling.seed)
        rows.append(["M", "", "M", *est.as_row()])
    else:
        if not 0 <= args.subsystem < net.n:
            raise ConfigError(f"subsystem index {args.subsystem} out of range")
        s = net.subsystems[args.subsystem]
        _, ug, _ = subsystem_grids(cfg, s)
        for k in range(ug.size):
            est = subsystem_lipschitz(s, ug.center(k), args.argument, lp.delta, lp.batches, lp.pairs,
                                      cfg.sampling.seed + 17 * k)
            rows.append([args.subsystem, k, args.argument, *est.as_row()])
    fh = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["subsystem", "input", "argument", "location", "scale", "shape"])
        for r in rows:
            w.writerow([r[0], r[1], r[2]] + ["%.17g" % v for v in r[3:]])
    finally:
        if args.csv:
            fh.close()
    return EXIT_OK


def cmd_sweep(args, cfg) -> int:
    n_list = [int(v) for v in args.n_list.split(",") if v.strip()]
    if not n_list:
        raise ConfigError("--n-list is empty")
    rows = scaling_sweep(cfg, n_list, ensure_dir(args.out), jobs=args.jobs or None)
    for r in rows:
        print(f"N={r['N']:>3d}  " + "  ".join(f"{p}={r['t_' + p]:.3f}s" for p in PHASES) + f"  {r['status']}")
    ok = [r for r in rows if r["status"] == "ok"]
    if len(ok) >= 2:
        a, b, r2 = linear_fit_r2([r["N"] for r in ok], [r["t_subsystems"] for r in ok])
        print(f"subsystem phase: slope {a:.4f} s/subsystem, R^2 {r2:.4f}")
    return EXIT_OK if len(ok) == len(rows) else EXIT_ERROR


def cmd_check(args, cfg) -> int:
    from .interconn import check_interconnection_soundness
    from .relstore import check_composition_soundness
    from .subsys_abs import check_growth_bound, check_refinement

    stages = _needed(args.out, cfg, args.reuse, ("composition",))
    res = run_pipeline(cfg, args.out, stages=stages, jobs=args.jobs or None, reuse=args.reuse)
    seed = cfg.sampling.seed
    report = {}
    rng = np.random.default_rng(seed)
    ref = gb = 0
    for i, (sys_i, a) in enumerate(zip(res.network.subsystems, res.subsystems)):
        ref += check_refinement(sys_i, a, args.trials, seed + i)
        live = np.flatnonzero(~a.blocked)
        for t in rng.choice(live, min(args.cells, live.size), replace=False) if live.size else []:
            gb += check_growth_bound(sys_i, a, int(t), args.pairs, seed + int(t))
    report["subsystem_refinement"] = ref
    report["growth_bound"] = gb
    report["interconnection"] = check_interconnection_soundness(
        res.network.interconnection, res.interconnection, args.trials, seed)
    viol, checked = check_composition_soundness(res.composed, res.network, min(args.trials, 2000), seed)
    report["composition"] = viol
    report["composition_checked"] = checked
    print(json.dumps(report, indent=2, sort_keys=True))
    bad = ref + gb + report["interconnection"] + viol
    return EXIT_UNSOUND if bad else EXIT_OK


def cmd_config(args) -> int:
    cfg = benchmark_defaults(args.benchmark, args.n)
    if not args.print_defaults:
        print("use --print-defaults", file=sys.stderr)
        return EXIT_ERROR
    sys.stdout.write(cfg.to_json() + "\n" if args.json else cfg.to_toml())
    return EXIT_OK


COMMANDS = {
    "abstract": cmd_abstract,
    "interconnect": cmd_interconnect,
    "compose": cmd_compose,
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "lipschitz": cmd_lipschitz,
    "sweep": cmd_sweep,
    "check": cmd_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "config":
        return cmd_config(args)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (ConfigError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
