"""Reach-and-stay synthesis on a composed abstraction and closed-loop rollouts.

The invariant core ``W`` is the greatest fixed point of
``S -> target & cpre(S)``; the reach set grows from ``W`` by ``cpre`` and
records the iteration at which each state enters (its rank).  The controller
is kept implicit: ``C(x)`` is recomputed from the rank masks on demand.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .formats import read_controller, write_controller, write_table_csv
from .geometry import TOL, UniformGrid
from .sysmodel import Network

log = logging.getLogger(__name__)

MASK_LIMIT = 1 << 26


class RefinementViolation(RuntimeError):
    """The concrete closed loop reached a state outside the controller domain."""


# ---------------------------------------------------------------------------
# targets

def _axis_sets(grid: UniformGrid, k: int, radius: float, centers: np.ndarray, strict: bool):
    """Boolean table ``[center, point]``: the cell of axis ``k`` lies in the ball."""
    p = grid.axis_points(k)
    if strict:
        lo = np.maximum(p - grid.eta[k] / 2, grid.domain.lower[k])
        hi = np.minimum(p + grid.eta[k] / 2, grid.domain.upper[k])
        return (lo[None, :] >= centers[:, None] - radius - TOL) & (
            hi[None, :] <= centers[:, None] + radius + TOL)
    return np.abs(p[None, :] - centers[:, None]) <= radius + TOL


def consensus_count(grid: UniformGrid, radius: float, centers, strict: bool = False) -> int:
    """Exact number of grid states in the union of the per-center boxes.

    A state lies in the box of ``phi`` iff ``phi`` sits in an interval fixed
    by the state, so the centers admitting a state are consecutive in sorted
    order and the union counts as ``sum |B_phi| - sum |B_phi & B_next|``.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    c = np.unique(np.asarray(centers, dtype=float))
    tabs = [_axis_sets(grid, k, radius, c, strict) for k in range(grid.dim)]
    sizes = np.array([t.sum(axis=1) for t in tabs], dtype=object)
    total = 0
    for j in range(len(c)):
        total += int(np.prod([int(x) for x in sizes[:, j]], dtype=object))
    for j in range(len(c) - 1):
        total -= int(np.prod([int((t[j] & t[j + 1]).sum()) for t in tabs], dtype=object))
    return total


def consensus_points(x, radius: float, centers) -> np.ndarray:
    """Concrete membership: some center is within ``radius`` of every component."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    c = np.unique(np.asarray(centers, dtype=float))
    lo = x.max(axis=1) - radius - TOL
    hi = x.min(axis=1) + radius + TOL
    k = np.searchsorted(c, lo, side="left")
    return (k < len(c)) & (c[np.minimum(k, len(c) - 1)] <= hi)


@dataclass
class TargetRegion:
    grid: UniformGrid
    radius: float
    centers: np.ndarray
    strict: bool
    count: int
    mask: np.ndarray | None = None

    def contains_points(self, x) -> np.ndarray:
        return consensus_points(x, self.radius, self.centers)

    def __len__(self) -> int:
        return self.count


def build_consensus_target(grid: UniformGrid, radius: float = 2.5, centers=None,
                           strict: bool = False, materialize: bool | None = None) -> TargetRegion:
    """Consensus region on ``grid`` (point mode classifies cells by their centers)."""
    centers = np.arange(32) if centers is None else np.asarray(centers)
    centers = np.unique(np.asarray(centers, dtype=float))
    count = consensus_count(grid, radius, centers, strict)
    if materialize is None:
        materialize = grid.size <= MASK_LIMIT
    mask = None
    if materialize:
        s = np.arange(grid.size)
        m = grid.multi(s)
        p = grid.center_multi(m)
        if strict:
            h = grid.eta / 2
            lo = np.maximum(p - h, grid.domain.lower)
            hi = np.minimum(p + h, grid.domain.upper)
            a = hi.max(axis=1) - radius - TOL
            b = lo.min(axis=1) + radius + TOL
        else:
            a = p.max(axis=1) - radius - TOL
            b = p.min(axis=1) + radius + TOL
        k = np.searchsorted(centers, a, side="left")
        mask = (k < len(centers)) & (centers[np.minimum(k, len(centers) - 1)] <= b)
    return TargetRegion(grid, float(radius), centers, strict, count, mask)


# ---------------------------------------------------------------------------
# fixed points

def controlled_predecessor(T, S: np.ndarray) -> np.ndarray:
    """States with an admissible input whose successors all lie in ``S``."""
    return T.cpre(np.ascontiguousarray(S, dtype=np.uint8)).astype(bool)


@dataclass
class Controller:
    comp: object
    W: np.ndarray
    rank: np.ndarray
    history: dict = field(default_factory=dict)
    _masks: dict = field(default_factory=dict, repr=False)

    @property
    def domain(self) -> np.ndarray:
        return self.rank >= 0

    @property
    def domain_size(self) -> int:
        return int(np.count_nonzero(self.rank >= 0))

    @property
    def is_empty(self) -> bool:
        return self.domain_size == 0

    def allowed_set(self, r: int) -> np.ndarray:
        """Successor set demanded at rank ``r``: the core or ranks below ``r``."""
        key = max(int(r), 1)
        m = self._masks.get(key)
        if m is None:
            m = np.ascontiguousarray(((self.rank >= 0) & (self.rank <= key - 1)), dtype=np.uint8)
            m.flags.writeable = False
            self._masks[key] = m
        return m

    def contains(self, s: int) -> bool:
        return bool(self.rank[s] >= 0)

    def inputs(self, s: int) -> np.ndarray:
        r = int(self.rank[s])
        if r < 0:
            return np.zeros(0, dtype=np.int64)
        return np.asarray(self.comp.valid_inputs(int(s), self.allowed_set(r)), dtype=np.int64)

    def save(self, path, states=None, header: dict | None = None) -> int:
        """Binary controller file (``states`` defaults to the whole domain)."""
        states = np.flatnonzero(self.domain) if states is None else np.asarray(states, dtype=np.int64)
        h = {
            "n_states": int(self.comp.n_states),
            "n_inputs": int(self.comp.n_inputs),
            "domain_size": self.domain_size,
            "core_size": int(self.W.sum()),
            "listed": int(len(states)),
            "state_grid": self.comp.state_grid.to_dict(),
            "input_grids": [sub.input_grid.to_dict() for sub in self.comp.subs],
        }
        h.update(header or {})
        write_controller(path, h, states, self._iter_inputs(states))
        return len(states)

    def _iter_inputs(self, states, batch: int = 4096):
        for a in range(0, len(states), batch):
            chunk = states[a:a + batch]
            table = np.zeros((len(chunk), self.comp.n_inputs), dtype=bool)
            for r in np.unique(self.rank[chunk]):
                sel = np.flatnonzero(self.rank[chunk] == r)
                if r >= 0:
                    table[sel] = self.comp.valid_input_mask(chunk[sel], self.allowed_set(r))
            for row in table:
                yield np.flatnonzero(row)

    def save_ranks(self, path) -> None:
        np.save(path, self.rank.astype(np.int32))


def load_controller(path):
    """``(header, {state: inputs})`` from a binary controller file."""
    h, states, inputs = read_controller(path)
    return h, dict(zip(states.tolist(), inputs))


class _GridIndex:
    """Enough of a composed abstraction to quantize states and decode inputs."""

    def __init__(self, state_grid: UniformGrid, input_grids: list[UniformGrid]):
        self.state_grid = state_grid
        self.input_grids = input_grids
        self.nu = tuple(g.size for g in input_grids)

    def input_values(self, u: int) -> np.ndarray:
        parts = np.unravel_index(int(u), self.nu)
        return np.concatenate([g.center(int(k)) for g, k in zip(self.input_grids, parts)])


class StoredController:
    """Controller read back from a binary file (only listed states are in the domain)."""

    def __init__(self, header: dict, table: dict):
        self.header = header
        self.table = table
        self.comp = _GridIndex(
            UniformGrid.from_dict(header["state_grid"]),
            [UniformGrid.from_dict(g) for g in header["input_grids"]],
        )

    @classmethod
    def load(cls, path) -> "StoredController":
        return cls(*load_controller(path))

    @property
    def domain_size(self) -> int:
        return len(self.table)

    def contains(self, s: int) -> bool:
        return int(s) in self.table

    def inputs(self, s: int) -> np.ndarray:
        return self.table.get(int(s), np.zeros(0, dtype=np.int64))

    def domain_states(self) -> np.ndarray:
        return np.fromiter(sorted(self.table), dtype=np.int64, count=len(self.table))


def synthesize_reach_stay(T, target, max_iter: int | None = None) -> Controller:
    """Maximally permissive reach-and-stay controller for ``target``.

    ``target`` is a :class:`TargetRegion` or a boolean state mask.
    """
    tgt = target.mask if isinstance(target, TargetRegion) else np.asarray(target, dtype=bool)
    if tgt is None:
        raise ValueError("target region is not materialized")
    if not tgt.any():
        raise ValueError("target region is empty")
    n = T.n_states
    limit = n + 1 if max_iter is None else max_iter
    t0 = time.perf_counter()

    W = np.ascontiguousarray(tgt, dtype=np.uint8).copy()
    cand = np.flatnonzero(W)
    core_sizes = [int(W.sum())]
    it = 0
    while cand.size and it < limit:
        it += 1
        ok = T.cpre(W, cand)
        removed = cand[~ok]
        if removed.size == 0:
            break
        W[removed] = 0
        core_sizes.append(int(W.sum()))
        D = np.zeros(n, dtype=bool)
        D[removed] = True
        cand = np.flatnonzero(W.astype(bool) & T.predecessors_hint(D))
    log.info("invariant core: %d states after %d iterations", core_sizes[-1], it)

    rank = np.full(n, -1, dtype=np.int32)
    rank[W.astype(bool)] = 0
    R = W.copy()
    F = W.astype(bool)
    reach_sizes = [int(R.sum())]
    k = 0
    while F.any() and k < limit:
        k += 1
        cand = np.flatnonzero(~R.astype(bool) & T.predecessors_hint(F))
        if cand.size == 0:
            break
        ok = T.cpre(R, cand)
        new = cand[ok]
        if new.size == 0:
            break
        R = R.copy()
        R[new] = 1
        rank[new] = k
        F = np.zeros(n, dtype=bool)
        F[new] = True
        reach_sizes.append(int(R.sum()))
    log.info("reach set: %d states, %d ranks", reach_sizes[-1], k)
    hist = {
        "core_sizes": core_sizes,
        "reach_sizes": reach_sizes,
        "seconds": time.perf_counter() - t0,
    }
    return Controller(T, W.astype(bool), rank, hist)


def check_controller(ctrl: Controller, states=None, n_samples: int = 200, seed: int = 0) -> int:
    """Closure and rank-decrease violations found on sampled domain states."""
    dom = np.flatnonzero(ctrl.domain)
    if states is None:
        rng = np.random.default_rng(seed)
        states = dom if len(dom) <= n_samples else rng.choice(dom, n_samples, replace=False)
    bad = 0
    for s in states:
        r = ctrl.rank[s]
        for u in ctrl.inputs(s):
            succ = ctrl.comp.successors(int(s), int(u))
            if len(succ) == 0:
                bad += 1
                continue
            rs = ctrl.rank[succ]
            if np.any(rs < 0):
                bad += 1
            elif r == 0 and np.any(rs != 0):
                bad += 1
            elif r > 0 and np.any(rs >= r):
                bad += 1
    return bad


# ---------------------------------------------------------------------------
# rollouts

@dataclass
class Rollout:
    x: np.ndarray  # (H + 1, n)
    u: np.ndarray  # (H, m)
    w: np.ndarray  # (H, p)
    inside: np.ndarray  # (H + 1,)
    satisfied: bool
    entry: int

    def to_csv(self, path) -> None:
        H = len(self.u)
        n, m, p = self.x.shape[1], self.u.shape[1], self.w.shape[1]
        cols = ["k"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
        cols += ["w"] if p == 1 else [f"w{i + 1}" for i in range(p)]
        pad = lambda a: np.vstack([a, np.full((1, a.shape[1]), np.nan)])
        rows = np.column_stack([np.arange(H + 1), self.x, pad(self.u), pad(self.w)])
        write_table_csv(path, cols, rows)


def reach_and_stay(inside: np.ndarray) -> tuple[bool, int]:
    """Entered at some step and never left afterwards (finite-horizon check)."""
    inside = np.asarray(inside, dtype=bool)
    if not inside[-1]:
        return False, -1
    out = np.flatnonzero(~inside)
    entry = 0 if out.size == 0 else int(out[-1]) + 1
    return True, entry


def refine_and_rollout(ctrl, network: Network, x0, horizon: int, seed: int,
                       target: TargetRegion) -> Rollout:
    """Closed loop with uniformly chosen controller inputs."""
    comp = ctrl.comp
    rng = np.random.default_rng(seed)
    x = np.asarray(x0, dtype=float).copy()
    xs, us, ws = [x], [], []
    for k in range(horizon):
        s = int(comp.state_grid.quantize(x))
        if not ctrl.contains(s):
            raise RefinementViolation(f"step {k}: state {x} (cell {s}) outside the controller domain")
        allowed = ctrl.inputs(s)
        if len(allowed) == 0:
            raise RefinementViolation(f"step {k}: no input available at cell {s}")
        u = comp.input_values(int(allowed[rng.integers(len(allowed))]))
        x, w = network.step(x, u)
        xs.append(x)
        us.append(u)
        ws.append(np.atleast_1d(w))
    X = np.array(xs)
    inside = target.contains_points(X)
    ok, entry = reach_and_stay(inside)
    return Rollout(X, np.array(us), np.array(ws), inside, ok, entry)


def open_loop_rollout(network: Network, x0, u, horizon: int, target: TargetRegion) -> Rollout:
    """Rollout with a constant input (``u = 0`` is the inactive controller)."""
    x = np.asarray(x0, dtype=float).copy()
    u = np.broadcast_to(np.asarray(u, dtype=float), (sum(s.external_input_domain.dim
                                                          for s in network.subsystems),)).copy()
    xs, us, ws = [x], [], []
    for _ in range(horizon):
        x, w = network.step(x, u)
        xs.append(x)
        us.append(u)
        ws.append(np.atleast_1d(w))
    X = np.array(xs)
    inside = target.contains_points(X)
    ok, entry = reach_and_stay(inside)
    return Rollout(X, np.array(us), np.array(ws), inside, ok, entry)


def sample_domain_states(ctrl, network: Network, n: int, seed: int) -> np.ndarray:
    """Concrete states drawn uniformly in randomly chosen domain cells."""
    from .subsys_abs import sample_cell

    rng = np.random.default_rng(seed)
    dom = ctrl.domain_states() if isinstance(ctrl, StoredController) else np.flatnonzero(ctrl.domain)
    if dom.size == 0:
        raise ValueError("empty controller domain")
    grid = ctrl.comp.state_grid
    dbox = network.interconnection.state_domain
    cells = rng.choice(dom, n, replace=True)
    return np.vstack([sample_cell(rng, grid, int(c), dbox) for c in cells])


__all__ = [
    "Controller",
    "RefinementViolation",
    "Rollout",
    "StoredController",
    "TargetRegion",
    "build_consensus_target",
    "check_controller",
    "consensus_count",
    "consensus_points",
    "controlled_predecessor",
    "load_controller",
    "open_loop_rollout",
    "reach_and_stay",
    "refine_and_rollout",
    "sample_domain_states",
    "synthesize_reach_stay",
]
