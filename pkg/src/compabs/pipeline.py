"""End-to-end construction: subsystems, interconnection, composition, synthesis.

Timings follow three phases (subsystem abstraction and storage, interconnection
approximation, composition); synthesis and rollouts are reported separately.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .formats import ensure_dir, read_relation
from .geometry import UniformGrid, product_grid
from .interconn import (
    abstract_interconnection,
    cross_validate_alpha,
    decompose,
    fit_lasso,
)
from .lipschitz import interconnection_lipschitz, subsystem_lipschitz
from .relstore import TabulatedInterconnection, compose_network
from .subsys_abs import SubsystemAbstraction, abstract_subsystem
from .synthesis import (
    RefinementViolation,
    build_consensus_target,
    open_loop_rollout,
    refine_and_rollout,
    sample_domain_states,
    synthesize_reach_stay,
)
from .sysmodel import Network, benchmark_network, collect_interconnection_data

log = logging.getLogger(__name__)

PHASES = ("subsystems", "interconnection", "composition")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException, result=None):
        self.stage = stage
        self.cause = cause
        self.result = result
        super().__init__(f"stage '{stage}' failed: {cause}")


@dataclass
class PipelineResult:
    cfg: RunConfig
    network: Network
    subsystems: list = field(default_factory=list)
    interconnection: object = None
    composed: object = None
    target: object = None
    controller: object = None
    rollouts: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


def network_from_config(cfg: RunConfig) -> Network:
    return benchmark_network(cfg.network.benchmark, cfg.network.n, cfg.network.a, cfg.network.b)


def subsystem_grids(cfg: RunConfig, sys) -> tuple[UniformGrid, UniformGrid, UniformGrid]:
    g = cfg.grid
    return (
        UniformGrid(sys.state_domain, g.eta_x),
        UniformGrid(sys.external_input_domain, g.eta_u),
        UniformGrid(sys.internal_input_domain, g.eta_w),
    )


def subsystem_lipschitz_table(cfg: RunConfig, sys, input_grid: UniformGrid, seed: int):
    """Per-input ``(L_x, L_w)``, estimating whatever is not pinned."""
    lp = cfg.lipschitz
    rows = []
    for k in range(input_grid.size):
        u = input_grid.center(k)
        lx = lp.L_x if lp.L_x >= 0 else subsystem_lipschitz(
            sys, u, "x", lp.delta, lp.batches, lp.pairs, seed + 17 * k).value
        lw = lp.L_w if lp.L_w >= 0 else subsystem_lipschitz(
            sys, u, "w", lp.delta, lp.batches, lp.pairs, seed + 17 * k + 1).value
        rows.append((lx, lw))
    return np.asarray(rows)


def _write_timing(path: Path, n: int, t: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N"] + [f"t_{p}" for p in PHASES])
        w.writerow([n] + ["%.6f" % t.get(p, float("nan")) for p in PHASES])


def load_subsystems(out: Path, n: int) -> list[SubsystemAbstraction]:
    return [SubsystemAbstraction.load(out / f"sub_{i}.rel") for i in range(n)]


def load_interconnection(path) -> TabulatedInterconnection:
    h, idx, lo, hi, _ = read_relation(path)
    if h.get("kind") != "interconnection":
        raise ValueError(f"{path} is not an interconnection abstraction")
    order = np.argsort(idx)
    return TabulatedInterconnection(
        UniformGrid.from_dict(h["state_grid"]),
        UniformGrid.from_dict(h["output_grid"]),
        lo[order],
        hi[order],
    )


def run_pipeline(
    cfg: RunConfig,
    out=None,
    stages=("subsystems", "interconnection", "composition", "synthesis"),
    jobs: int | None = None,
    dump_theta: bool = False,
    reuse: bool = False,
) -> PipelineResult:
    """Run the requested stages; on failure the output keeps a ``.partial`` marker."""
    cfg.validate()
    jobs = jobs or cfg.jobs or default_jobs()
    out = ensure_dir(out) if out is not None else None
    marker = out / ".partial" if out is not None else None
    if marker is not None:
        marker.write_text("running\n")
    res = PipelineResult(cfg, network_from_config(cfg))
    stage = "setup"
    try:
        stage = "subsystems"
        if "subsystems" in stages:
            _stage_subsystems(res, out, jobs, dump_theta)
        elif reuse and out is not None and (out / "sub_0.rel").exists():
            res.subsystems = load_subsystems(out, cfg.network.n)
        stage = "interconnection"
        if "interconnection" in stages:
            _stage_interconnection(res, out)
        elif reuse and out is not None and (out / "interconnection.rel").exists():
            res.interconnection = load_interconnection(out / "interconnection.rel")
        stage = "composition"
        if "composition" in stages or "synthesis" in stages:
            if not res.subsystems or res.interconnection is None:
                raise RuntimeError("composition needs the subsystem and interconnection stages")
            _stage_composition(res, out)
        stage = "synthesis"
        if "synthesis" in stages and cfg.synthesis.enabled:
            _stage_synthesis(res, out)
    except Exception as e:
        if marker is not None:
            marker.write_text(f"failed in stage {stage}: {e}\n")
        raise PipelineError(stage, e, res) from e
    if out is not None:
        _write_timing(out / "timing.csv", cfg.network.n, res.timings)
        res.artifacts["timing"] = str(out / "timing.csv")
        res.summary["timings"] = res.timings
        (out / "summary.json").write_text(json.dumps(res.summary, indent=2, sort_keys=True, default=str))
        marker.unlink()
    return res


def _stage_subsystems(res: PipelineResult, out, jobs: int, dump_theta: bool) -> None:
    cfg = res.cfg
    t0 = time.perf_counter()
    subs_sys = res.network.subsystems

    def work(i):
        sys = subs_sys[i]
        sg, ug, wg = subsystem_grids(cfg, sys)
        L = subsystem_lipschitz_table(cfg, sys, ug, cfg.sampling.seed + 1000 * (i + 1))
        inner = 1 if len(subs_sys) > 1 else jobs
        return abstract_subsystem(sys, sg, ug, wg, L, cfg.sampling.n_c, cfg.theta_max, jobs=inner)

    if jobs > 1 and len(subs_sys) > 1:
        with ThreadPoolExecutor(min(jobs, len(subs_sys))) as ex:
            subs = list(ex.map(work, range(len(subs_sys))))
    else:
        subs = [work(i) for i in range(len(subs_sys))]
    if out is not None:
        for i, a in enumerate(subs):
            a.save(out / f"sub_{i}.rel")
            res.artifacts[f"sub_{i}"] = str(out / f"sub_{i}.rel")
            if dump_theta:
                a.dump_theta(out / f"theta_{i}.csv")
    res.subsystems = subs
    res.timings["subsystems"] = time.perf_counter() - t0
    res.summary["subsystems"] = {
        "triples": int(subs[0].n_triples),
        "blocked_fraction": [float(a.blocked.mean()) for a in subs],
        "lipschitz_max": [float(np.max(a.meta["lipschitz"])) for a in subs],
    }


def _stage_interconnection(res: PipelineResult, out) -> None:
    cfg = res.cfg
    sp, lp = cfg.sampling, cfg.lipschitz
    t0 = time.perf_counter()
    ic = res.network.interconnection
    grids = [subsystem_grids(cfg, s)[0] for s in res.network.subsystems]
    state_grid = product_grid(grids)
    output_grid = UniformGrid(ic.output_domain, cfg.grid.eta_w)
    L_M = lp.L_M if lp.L_M >= 0 else interconnection_lipschitz(
        ic, lp.delta, lp.batches, lp.pairs, sp.seed + 1).value
    data = collect_interconnection_data(ic, sp.n_i, sp.seed, sp.n_fit)
    grid_a = cfg.lasso.alpha_grid
    alpha = grid_a[0] if len(grid_a) == 1 else cross_validate_alpha(data, grid_a, cfg.lasso.folds)
    est = fit_lasso(data, alpha)
    dec = decompose(est.matrix, cfg.decomposition.sigma, cfg.decomposition.mode)
    ia = abstract_interconnection(dec, state_grid, output_grid, data, est, L_M, cfg.eta_z)
    if out is not None:
        files = ia.save_matrices(out / "interconnection")
        if ia.wlo is not None:
            ia.save(out / "interconnection.rel")
            files.append(str(out / "interconnection.rel"))
        res.artifacts["interconnection"] = [str(f) for f in files]
    res.interconnection = ia
    res.timings["interconnection"] = time.perf_counter() - t0
    res.summary["interconnection"] = {
        "alpha": float(alpha),
        "L_M": float(L_M),
        "layers": len(dec.layers),
        "max_indegree": int(dec.max_indegree()),
        "materialized": ia.wlo is not None,
        "mean_width": float(np.mean(np.prod(ia.whi - ia.wlo + 1, axis=1))) if ia.wlo is not None else None,
    }


def _stage_composition(res: PipelineResult, out) -> None:
    cfg = res.cfg
    t0 = time.perf_counter()
    comp = compose_network(res.subsystems, res.interconnection, res.network.channels, cfg.backend)
    if comp.backend == "factored":
        comp._reachability()
    manifest = {
        "backend": comp.backend,
        "n_states": str(comp.n_states),
        "n_inputs": str(comp.n_inputs),
        "subsystems": [f"sub_{i}.rel" for i in range(len(res.subsystems))],
        "interconnection": "interconnection.rel" if getattr(res.interconnection, "wlo", None) is not None else None,
    }
    if out is not None:
        if comp.backend in ("explicit", "bdd"):
            rows = comp.transition_tuples()
            np.savetxt(out / "composed_T.csv", rows, fmt="%d", delimiter=",",
                       header="state,input,successor", comments="")
            manifest["relation_csv"] = "composed_T.csv"
            manifest["tuples"] = int(len(rows))
            if comp.backend == "bdd":
                comp.export_bdd(out / "composed_T.bdd")
                manifest["relation_bdd"] = "composed_T.bdd"
        (out / "composed.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        res.artifacts["composed"] = str(out / "composed.json")
    res.composed = comp
    res.timings["composition"] = time.perf_counter() - t0
    res.summary["composition"] = manifest


def _stage_synthesis(res: PipelineResult, out) -> None:
    cfg, sy = res.cfg, res.cfg.synthesis
    comp = res.composed
    t0 = time.perf_counter()
    target = build_consensus_target(
        comp.state_grid, sy.radius, np.arange(sy.center_min, sy.center_max + 1), sy.strict)
    ctrl = synthesize_reach_stay(comp, target)
    res.target, res.controller = target, ctrl
    t_syn = time.perf_counter() - t0
    summary = {
        "target_size": int(target.count),
        "core_size": int(ctrl.W.sum()),
        "domain_size": ctrl.domain_size,
        "ranks": int(ctrl.rank.max()),
        "seconds": t_syn,
    }
    if out is not None:
        listed = ctrl.save(out / "controller.bin")
        ctrl.save_ranks(out / "controller_ranks.npy")
        res.artifacts["controller"] = str(out / "controller.bin")
        summary["controller_listed"] = listed
    if not ctrl.is_empty and sy.rollouts > 0:
        rdir = ensure_dir(out / "rollouts") if out is not None else None
        x0s = sample_domain_states(ctrl, res.network, sy.rollouts, cfg.sampling.seed)
        sat = viol = 0
        for k, x0 in enumerate(x0s):
            try:
                r = refine_and_rollout(ctrl, res.network, x0, sy.horizon, cfg.sampling.seed + k, target)
            except RefinementViolation as e:
                viol += 1
                log.error("rollout %d: %s", k, e)
                continue
            sat += bool(r.satisfied)
            res.rollouts.append(r)
            if rdir is not None:
                r.to_csv(rdir / f"rollout_{k:03d}.csv")
        summary.update(rollouts=len(x0s), satisfied=sat, refinement_violations=viol)
    if sy.x0:
        x0 = np.asarray(sy.x0, dtype=float)
        s0 = int(comp.state_grid.quantize(x0))
        summary["x0_in_domain"] = bool(ctrl.rank[s0] >= 0)
        off = open_loop_rollout(res.network, x0, 0.0, sy.horizon, target)
        summary["x0_inactive_satisfied"] = bool(off.satisfied)
        if out is not None:
            off.to_csv(ensure_dir(out / "rollouts") / "rollout_inactive.csv")
        if ctrl.rank[s0] >= 0:
            r = refine_and_rollout(ctrl, res.network, x0, sy.horizon, cfg.sampling.seed, target)
            summary["x0_controlled_satisfied"] = bool(r.satisfied)
            if out is not None:
                r.to_csv(out / "rollouts" / "rollout_x0.csv")
    res.summary["synthesis"] = summary


def scaling_sweep(cfg: RunConfig, n_list, out=None, jobs: int | None = None) -> list[dict]:
    """Pipeline timings per network size; failures are recorded and skipped."""
    if not n_list:
        raise ValueError("n_list must not be empty")
    rows = []
    base = Path(out) if out is not None else None
    for n in n_list:
        c = cfg.replace(network={"n": int(n)}, synthesis={"enabled": False})
        row = {"N": int(n)}
        try:
            r = run_pipeline(c, base / f"N{n}" if base is not None else None,
                             stages=PHASES, jobs=jobs)
            row.update({f"t_{p}": r.timings[p] for p in PHASES}, status="ok")
        except PipelineError as e:
            log.error("sweep N=%d: %s", n, e)
            done = e.result.timings if e.result is not None else {}
            row.update({f"t_{p}": done.get(p, float("nan")) for p in PHASES}, status=f"error: {e.stage}")
        rows.append(row)
        if base is not None:
            write_sweep_csv(base / "sweep.csv", rows)
    return rows


def write_sweep_csv(path, rows) -> None:
    cols = ["N"] + [f"t_{p}" for p in PHASES] + ["status"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r["N"]] + ["%.6f" % r[f"t_{p}"] for p in PHASES] + [r["status"]])


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        return [{k: (v if k == "status" else float(v)) for k, v in r.items()} for r in rd]


def linear_fit_r2(x, y) -> tuple[float, float, float]:
    """Least-squares line ``y = a x + b`` and its coefficient of determination."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a, b = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (a * x + b)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return float(a), float(b), 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


__all__ = [
    "PHASES",
    "PipelineError",
    "PipelineResult",
    "default_jobs",
    "linear_fit_r2",
    "load_interconnection",
    "load_subsystems",
    "network_from_config",
    "read_sweep_csv",
    "run_pipeline",
    "scaling_sweep",
    "subsystem_grids",
    "subsystem_lipschitz_table",
    "write_sweep_csv",
]
