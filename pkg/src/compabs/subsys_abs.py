"""Finite abstraction of one black-box subsystem from cell samples.

For each triple ``(x, u, w)`` of grid points the subsystem is simulated at the
center, the growth bound is learned from a regular sub-grid of the state cell,
and the successor set is the grid box met by ``c +- kappa(eta_x)``.  Triples
whose inflated box leaves the state domain are blocked.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .formats import read_relation, write_relation, write_table_csv
from .geometry import TOL, Box, UniformGrid
from .growthbound import (
    DEFAULT_THETA_MAX,
    GrowthBoundParams,
    ScpMargin,
    compute_margin,
    solve_scp,
    solve_scp_batch_1d,
)
from .sysmodel import BlackBoxSubsystem, collect_subsystem_cell_data, subgrid_count

log = logging.getLogger(__name__)


@dataclass
class SubsystemAbstraction:
    state_grid: UniformGrid
    input_grid: UniformGrid
    w_grid: UniformGrid
    lo: np.ndarray  # (T, dx) successor box corners
    hi: np.ndarray
    blocked: np.ndarray  # (T,)
    theta1: np.ndarray  # (T, dx, dx)
    theta2: np.ndarray  # (T, dx)
    center: np.ndarray  # (T, dx)
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.state_grid.size, self.input_grid.size, self.w_grid.size

    @property
    def n_triples(self) -> int:
        nx, nu, nw = self.shape
        return nx * nu * nw

    def triple(self, ix, iu, iw):
        _, nu, nw = self.shape
        return (np.asarray(ix) * nu + np.asarray(iu)) * nw + np.asarray(iw)

    def split(self, t):
        _, nu, nw = self.shape
        t = np.asarray(t)
        return t // (nu * nw), (t // nw) % nu, t % nw

    def params(self, t: int) -> GrowthBoundParams:
        return GrowthBoundParams(self.theta1[t], self.theta2[t], tuple(int(v) for v in self.split(t)))

    def gamma(self, r=None) -> np.ndarray:
        r = self.state_grid.eta if r is None else np.asarray(r, dtype=float)
        return np.einsum("tij,j->ti", self.theta1, r) + self.theta2

    def successors(self, t: int) -> np.ndarray:
        """Flat state indices of the successor set of triple ``t``."""
        if self.blocked[t]:
            return np.empty(0, dtype=np.int64)
        axes = [np.arange(a, b + 1) for a, b in zip(self.lo[t], self.hi[t])]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        return np.sort(self.state_grid.flat(mesh))

    def contains(self, t, next_multi) -> np.ndarray:
        k = np.atleast_2d(next_multi)
        t = np.asarray(t)
        return ~self.blocked[t] & np.all((k >= self.lo[t]) & (k <= self.hi[t]), axis=-1)

    def tuples(self) -> np.ndarray:
        """All ``(x, u, w, x')`` index tuples (small abstractions only)."""
        rows = []
        for t in np.flatnonzero(~self.blocked):
            ix, iu, iw = self.split(t)
            for s in self.successors(t):
                rows.append((ix, iu, iw, s))
        return np.asarray(rows, dtype=np.int64).reshape(-1, 4)

    # serialization -----------------------------------------------------
    def header(self) -> dict:
        return {
            "kind": "subsystem",
            "state_grid": self.state_grid.to_dict(),
            "input_grid": self.input_grid.to_dict(),
            "w_grid": self.w_grid.to_dict(),
            "meta": self.meta,
        }

    def save(self, path) -> None:
        write_relation(path, self.header(), np.arange(self.n_triples), self.lo, self.hi, self.blocked)

    @classmethod
    def load(cls, path) -> "SubsystemAbstraction":
        """Reload the transition part; growth-bound parameters are not stored."""
        h, idx, lo, hi, blocked = read_relation(path)
        if h.get("kind") != "subsystem":
            raise ValueError(f"{path} is not a subsystem abstraction")
        sg = UniformGrid.from_dict(h["state_grid"])
        T = len(idx)
        order = np.argsort(idx)
        dx = sg.dim
        return cls(
            sg,
            UniformGrid.from_dict(h["input_grid"]),
            UniformGrid.from_dict(h["w_grid"]),
            lo[order],
            hi[order],
            blocked[order],
            np.full((T, dx, dx), np.nan),
            np.full((T, dx), np.nan),
            np.full((T, dx), np.nan),
            h.get("meta", {}),
        )

    def dump_theta(self, path) -> None:
        dx = self.state_grid.dim
        ix, iu, iw = self.split(np.arange(self.n_triples))
        cols = ["x_index", "u_index", "w_index"]
        cols += [f"theta1_{i}{j}" for i in range(dx) for j in range(dx)]
        cols += [f"theta2_{i}" for i in range(dx)] + ["blocked"]
        rows = np.column_stack(
            [ix, iu, iw, self.theta1.reshape(self.n_triples, -1), self.theta2, self.blocked]
        )
        write_table_csv(path, cols, rows)


def _lipschitz_table(lipschitz, input_grid: UniformGrid) -> np.ndarray:
    """Per-input ``(L_x, L_w)`` rows from a pair, a table or a callable."""
    nu = input_grid.size
    if callable(lipschitz):
        return np.array([lipschitz(input_grid.center(k)) for k in range(nu)], dtype=float)
    arr = np.asarray(lipschitz, dtype=float)
    if arr.shape == (2,):
        return np.tile(arr, (nu, 1))
    if arr.shape == (nu, 2):
        return arr
    raise ValueError("lipschitz must be (L_x, L_w), a (n_inputs, 2) table or a callable")


def _finish(sys, grid, theta1, theta2, center):
    eta = grid.eta
    gamma = np.einsum("tij,j->ti", theta1, eta) + theta2
    blo = center - gamma
    bhi = center + gamma
    dom = sys.state_domain
    blocked = np.any(blo < dom.lower - TOL, axis=1) | np.any(bhi > dom.upper + TOL, axis=1)
    blocked |= ~np.all(np.isfinite(center), axis=1)
    klo, khi, empty = grid.intersecting_range(
        np.where(np.isfinite(blo), blo, 0.0), np.where(np.isfinite(bhi), bhi, 0.0)
    )
    blocked |= empty
    return klo.astype(np.int32), khi.astype(np.int32), blocked


def abstract_subsystem(
    sys: BlackBoxSubsystem,
    state_grid: UniformGrid,
    input_grid: UniformGrid,
    w_grid: UniformGrid,
    lipschitz,
    n_c: int,
    theta_max=DEFAULT_THETA_MAX,
    jobs: int = 1,
    chunk: int = 4096,
) -> SubsystemAbstraction:
    """Build the abstraction over all ``(x, u, w)`` grid triples."""
    if n_c < 1:
        raise ValueError("n_c must be >= 1")
    nx, nu, nw = state_grid.size, input_grid.size, w_grid.size
    dx = state_grid.dim
    T = nx * nu * nw
    L = _lipschitz_table(lipschitz, input_grid)
    rho_u = np.stack(
        [compute_margin(L[k, 0], L[k, 1], state_grid.eta, w_grid.eta, n_c).rho for k in range(nu)]
    )
    xs = state_grid.centers()
    us = input_grid.centers()
    ws = w_grid.centers()
    t_all = np.arange(T)
    ix, iu, iw = t_all // (nu * nw), (t_all // nw) % nu, t_all % nw
    center = sys.simulate(xs[ix], us[iu], ws[iw])

    theta1 = np.zeros((T, dx, dx))
    theta2 = np.zeros((T, dx))
    m = subgrid_count(n_c, dx)

    if dx == 1:
        # sub-grid of each state cell, clipped to the domain
        lo = np.maximum(xs[:, 0] - state_grid.eta[0] / 2, sys.state_domain.lower[0])
        hi = np.minimum(xs[:, 0] + state_grid.eta[0] / 2, sys.state_domain.upper[0])
        if n_c == 1:
            sub = xs[:, :1]
            spacing = np.zeros(nx)
        else:
            sub = lo[:, None] + (np.arange(m)[None, :] + 0.5) * ((hi - lo) / m)[:, None]
            spacing = (hi - lo) / m
        mm = sub.shape[1]

        def work(start):
            sl = slice(start, min(start + chunk, T))
            n = sl.stop - sl.start
            xq = sub[ix[sl]].reshape(-1, 1)
            uq = np.repeat(us[iu[sl]], mm, axis=0)
            wq = np.repeat(ws[iw[sl]], mm, axis=0)
            xn = sys.simulate(xq, uq, wq).reshape(n, mm)
            keys = list(zip(ix[sl], iu[sl], iw[sl]))
            return sl, solve_scp_batch_1d(
                xn, spacing[ix[sl]], rho_u[iu[sl], 0], theta_max, keys
            )

        starts = range(0, T, chunk)
        if jobs > 1:
            with ThreadPoolExecutor(jobs) as ex:
                results = list(ex.map(work, starts))
        else:
            results = [work(s) for s in starts]
        for sl, (t1, t2) in results:
            theta1[sl, 0, 0] = t1
            theta2[sl, 0] = t2
    else:
        for t in range(T):
            d = collect_subsystem_cell_data(
                sys, (xs[ix[t]], us[iu[t]], ws[iw[t]]), state_grid.eta, w_grid.eta, n_c
            )
            margin = ScpMargin(rho_u[iu[t]], state_grid.eta / m, tuple(L[iu[t]]))
            p = solve_scp(d, margin, theta_max, key=(int(ix[t]), int(iu[t]), int(iw[t])))
            theta1[t] = p.theta1
            theta2[t] = p.theta2

    klo, khi, blocked = _finish(sys, state_grid, theta1, theta2, center)
    over = np.max(theta1.sum(axis=2), axis=1) > L[iu, 0] + 1e-9
    if np.any(over):
        log.debug("%d cells have |theta1| above L_x", int(over.sum()))
    meta = {
        "name": sys.name,
        "n_c": int(n_c),
        "subgrid": int(m),
        "lipschitz": L.tolist(),
        "theta_max": float(np.max(theta_max)),
        "theta1_above_lx": int(over.sum()),
    }
    return SubsystemAbstraction(
        state_grid, input_grid, w_grid, klo, khi, blocked, theta1, theta2, center, meta
    )


def sample_cell(rng, grid: UniformGrid, idx, domain: Box | None = None) -> np.ndarray:
    """Uniform points of the half-open cells ``idx`` (clipped to ``domain``)."""
    c = grid.center(idx)
    lo = c - grid.eta / 2
    hi = c + grid.eta / 2
    if domain is not None:
        lo = np.maximum(lo, domain.lower)
        hi = np.minimum(hi, domain.upper)
    return rng.uniform(lo, hi)


def check_refinement(
    sys: BlackBoxSubsystem,
    abs_: SubsystemAbstraction,
    n_trials: int,
    seed: int = 0,
    at_centers: bool = False,
) -> int:
    """Monte-Carlo count of concrete transitions missed by the abstraction."""
    rng = np.random.default_rng(seed)
    live = np.flatnonzero(~abs_.blocked)
    if live.size == 0:
        return 0
    t = live[rng.integers(0, live.size, n_trials)]
    ix, iu, iw = abs_.split(t)
    if at_centers:
        x = abs_.state_grid.center(ix)
        w = abs_.w_grid.center(iw)
    else:
        x = sample_cell(rng, abs_.state_grid, ix, sys.state_domain)
        w = sample_cell(rng, abs_.w_grid, iw, sys.internal_input_domain)
    u = abs_.input_grid.center(iu)
    xn = sys.simulate(x, u, w)
    inside = abs_.state_grid.in_domain(xn)
    viol = int(np.sum(~inside))
    if np.any(inside):
        k = abs_.state_grid.quantize_multi(xn[inside])
        viol += int(np.sum(~abs_.contains(t[inside], k)))
    return viol


def check_growth_bound(
    sys: BlackBoxSubsystem, abs_: SubsystemAbstraction, t: int, n_pairs: int, seed: int = 0
) -> int:
    """Fresh continuous pairs of cell ``t`` violating the learned bound."""
    rng = np.random.default_rng(seed)
    ix, iu, iw = abs_.split(t)
    idx_x = np.full(n_pairs, ix)
    idx_w = np.full(n_pairs, iw)
    x1 = sample_cell(rng, abs_.state_grid, idx_x, sys.state_domain)
    x2 = sample_cell(rng, abs_.state_grid, idx_x, sys.state_domain)
    w1 = sample_cell(rng, abs_.w_grid, idx_w, sys.internal_input_domain)
    w2 = sample_cell(rng, abs_.w_grid, idx_w, sys.internal_input_domain)
    u = abs_.input_grid.center(np.full(n_pairs, iu))
    gap = np.abs(sys.simulate(x1, u, w1) - sys.simulate(x2, u, w2))
    bound = np.abs(x1 - x2) @ abs_.theta1[t].T + abs_.theta2[t]
    return int(np.sum(np.any(gap > bound, axis=1)))


__all__ = [
    "SubsystemAbstraction",
    "abstract_subsystem",
    "check_growth_bound",
    "check_refinement",
    "sample_cell",
]
