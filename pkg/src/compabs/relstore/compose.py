"""Composition of subsystem abstractions through the interconnection abstraction.

All backends expose the same queries on composed state and input indices:

* ``T(x, u, x')`` holds iff some ``w`` in ``M(x)`` gives ``x'_i`` in the box of
  every subsystem triple ``(x_i, u_i, w_i)``;
* ``(x, u)`` is admissible iff no ``w`` in ``M(x)`` blocks any component.

``explicit`` and ``bdd`` build the full relation from conjunctions and
projections; ``factored`` keeps the per-subsystem tables and answers the same
queries directly from boxes (needed once the product is too large to list).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..geometry import Box, UniformGrid, product_grid
from .bdd import BDD
from .relation import (
    SymbolicRelation,
    Variable,
    VariableLayout,
    conjoin,
    conjoin_all,
    difference,
    exists,
)

log = logging.getLogger(__name__)

EXPLICIT_LIMIT = 1 << 22


class GridMismatchError(ValueError):
    pass


@dataclass
class TabulatedInterconnection:
    """Interconnection abstraction given by stored output-grid boxes per state."""

    state_grid: UniformGrid
    output_grid: UniformGrid
    wlo: np.ndarray
    whi: np.ndarray

    def query(self, states):
        s = np.asarray(states, dtype=np.int64)
        return self.wlo[s], self.whi[s]

    def contains(self, states, w_multi) -> np.ndarray:
        lo, hi = self.query(states)
        w = np.atleast_2d(w_multi)
        return np.all((w >= lo) & (w <= hi), axis=1)


def project_grid(grid: UniformGrid, comps) -> UniformGrid:
    comps = list(comps)
    return UniformGrid(Box(grid.domain.lower[comps], grid.domain.upper[comps]), grid.eta[comps])


def _check(subs, ia, channels):
    if not subs:
        raise GridMismatchError("no subsystems")
    if channels is None:
        channels = [list(range(ia.output_grid.dim))] * len(subs)
    if len(channels) != len(subs):
        raise GridMismatchError("one channel list per subsystem is required")
    sg = product_grid([s.state_grid for s in subs])
    if sg != ia.state_grid:
        raise GridMismatchError("interconnection state grid is not the product of subsystem grids")
    for i, (s, ch) in enumerate(zip(subs, channels)):
        if project_grid(ia.output_grid, ch) != s.w_grid:
            raise GridMismatchError(f"internal-input grid of subsystem {i} does not match its channels")
    return sg, [list(c) for c in channels]


def _box_members(klo, khi, grid: UniformGrid):
    """CSR ``(ptr, idx)`` of flat indices inside each index box."""
    klo = np.atleast_2d(klo).astype(np.int64)
    khi = np.atleast_2d(khi).astype(np.int64)
    n = len(klo)
    width = khi - klo + 1
    cnt = np.prod(width, axis=1)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(cnt, out=ptr[1:])
    row = np.repeat(np.arange(n), cnt)
    off = np.arange(ptr[-1]) - ptr[row]
    multi = np.empty((len(row), grid.dim), dtype=np.int64)
    for k in range(grid.dim - 1, -1, -1):
        wk = width[row, k]
        multi[:, k] = klo[row, k] + off % wk
        off //= wk
    return ptr, grid.flat(multi).astype(np.int64) if len(row) else np.zeros(0, dtype=np.int64)


class ComposedAbstraction:
    """Query interface shared by the backends (indices are flat, C order)."""

    backend = "abstract"

    def __init__(self, subs, ia, channels):
        self.subs = list(subs)
        self.ia = ia
        self.state_grid, self.channels = _check(subs, ia, channels)
        self.nx = np.array([s.state_grid.size for s in subs], dtype=np.int64)
        self.nu = np.array([s.input_grid.size for s in subs], dtype=np.int64)
        self.nw = ia.output_grid.size
        self.n_states = self.state_grid.size
        self.n_inputs = math.prod(int(v) for v in self.nu)
        self.sub_axes = np.concatenate([[0], np.cumsum([s.state_grid.dim for s in subs])]).astype(np.int64)
        ow = ia.output_grid.multi(np.arange(self.nw))
        self.wproj = [s.w_grid.flat(ow[:, ch]) for s, ch in zip(subs, self.channels)]

    # index helpers -----------------------------------------------------
    def split_state(self, s) -> np.ndarray:
        """Per-subsystem flat state indices, shape ``(n, N)``."""
        m = self.state_grid.multi(np.atleast_1d(s))
        return np.stack(
            [self.subs[i].state_grid.flat(m[:, a:b]) for i, (a, b) in
             enumerate(zip(self.sub_axes[:-1], self.sub_axes[1:]))], axis=1)

    def join_state(self, parts) -> np.ndarray:
        parts = np.atleast_2d(parts)
        m = np.hstack([self.subs[i].state_grid.multi(parts[:, i]) for i in range(len(self.subs))])
        return self.state_grid.flat(m)

    def split_input(self, u) -> np.ndarray:
        return np.stack(np.unravel_index(np.atleast_1d(u), tuple(self.nu)), axis=1)

    def join_input(self, parts) -> np.ndarray:
        parts = np.atleast_2d(parts)
        return np.ravel_multi_index(tuple(parts.T), tuple(self.nu))

    def input_values(self, u: int) -> np.ndarray:
        """Concrete stacked input represented by composed input ``u``."""
        parts = self.split_input(u)[0]
        return np.concatenate([s.input_grid.center(int(k)) for s, k in zip(self.subs, parts)])

    # queries (backends override) --------------------------------------
    def cpre(self, S: np.ndarray, cand=None) -> np.ndarray:
        raise NotImplementedError

    def valid_inputs(self, s: int, S: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def successors(self, s: int, u: int) -> np.ndarray:
        raise NotImplementedError

    def valid_input_mask(self, states, S) -> np.ndarray:
        """Boolean ``(len(states), n_inputs)`` table of inputs valid for ``S``."""
        states = np.asarray(states, dtype=np.int64)
        mask = np.zeros((len(states), self.n_inputs), dtype=bool)
        for k, s in enumerate(states):
            mask[k, self.valid_inputs(int(s), S)] = True
        return mask

    def full_set(self) -> np.ndarray:
        if getattr(self, "_full", None) is None:
            self._full = np.ones(self.n_states, dtype=np.uint8)
            self._full.flags.writeable = False
        return self._full

    def admissible_inputs(self, s: int) -> np.ndarray:
        return self.valid_inputs(s, self.full_set())

    def predecessors_hint(self, F: np.ndarray) -> np.ndarray:
        """Superset of the states with some transition into the set ``F``."""
        raise NotImplementedError

    def transition_tuples(self) -> np.ndarray:
        """Sorted ``(state, input, successor)`` rows of the admissible relation."""
        raise NotImplementedError


# ---------------------------------------------------------------------------
# relation backends

def build_layout(subs, nw: int) -> VariableLayout:
    """Per subsystem interleaved state/next-state bits then its input; shared w last."""
    vs, pairs = [], []
    for i, s in enumerate(subs):
        vs += [Variable(f"x{i}", s.state_grid.size, "state"),
               Variable(f"x{i}n", s.state_grid.size, "next_state"),
               Variable(f"u{i}", s.input_grid.size, "ext_input")]
        pairs.append((f"x{i}", f"x{i}n"))
    vs.append(Variable("w", nw, "int_input"))
    return VariableLayout(vs, pairs)


class RelationComposed(ComposedAbstraction):
    """Composition carried out on :class:`SymbolicRelation` objects."""

    def __init__(self, subs, ia, channels=None, backend="explicit", manager: BDD | None = None):
        super().__init__(subs, ia, channels)
        self.backend = backend
        N = len(subs)
        self.layout = L = build_layout(subs, self.nw)
        if backend == "bdd":
            manager = manager if manager is not None else BDD(L.n_levels)
        self.manager = manager
        make = lambda names, rows: SymbolicRelation.from_tuples(L, names, rows, backend, manager)

        # M-hat over (x_0..x_{N-1}, w)
        states = np.arange(self.n_states)
        wlo, whi = ia.query(states)
        ptr, widx = _box_members(wlo, whi, ia.output_grid)
        srow = np.repeat(states, np.diff(ptr))
        xs = self.split_state(srow)
        mrel = make([f"x{i}" for i in range(N)] + ["w"], np.column_stack([xs, widx]))

        f_rels, b_rels = [], []
        for i, sub in enumerate(subs):
            tup = sub.tuples()  # (x, u, w_i, x')
            rows_f, rows_b = [], []
            bl = np.flatnonzero(sub.blocked)
            bx, bu, bw = sub.split(bl)
            for wf in range(self.nw):
                wi = self.wproj[i][wf]
                sel = tup[tup[:, 2] == wi]
                rows_f.append(np.column_stack([sel[:, 0], sel[:, 1], np.full(len(sel), wf), sel[:, 3]]))
                m = bw == wi
                rows_b.append(np.column_stack([bx[m], bu[m], np.full(int(m.sum()), wf)]))
            f_rels.append(make([f"x{i}", f"u{i}", "w", f"x{i}n"], np.vstack(rows_f)))
            b_rels.append(make([f"x{i}", f"u{i}", "w"], np.vstack(rows_b)))

        joint = conjoin_all([mrel] + f_rels)
        T = exists(joint, ["w"])
        for i in range(N):
            bad = exists(conjoin(mrel, b_rels[i]), ["w"])
            T = difference(T, bad)
        self.M = mrel
        self.T = T
        self.adm = exists(T, [f"x{i}n" for i in range(N)])
        self._csr = None

    # explicit view -----------------------------------------------------
    def _columns(self, rel, kind):
        N = len(self.subs)
        return [rel.names.index(f"{kind}{i}" if kind != "xn" else f"x{i}n") for i in range(N)]

    def transition_tuples(self) -> np.ndarray:
        rows = self.T.tuples()
        s = self.join_state(rows[:, self._columns(self.T, "x")]) if len(rows) else np.zeros(0, np.int64)
        u = self.join_input(rows[:, self._columns(self.T, "u")]) if len(rows) else np.zeros(0, np.int64)
        n = self.join_state(rows[:, self._columns(self.T, "xn")]) if len(rows) else np.zeros(0, np.int64)
        out = np.column_stack([s, u, n]).astype(np.int64)
        return out[np.lexsort((out[:, 2], out[:, 1], out[:, 0]))]

    def _explicit(self):
        if self._csr is None:
            self._csr = ExplicitComposed.from_tuples(self, self.transition_tuples())
        return self._csr

    def cpre(self, S, cand=None):
        if self.backend == "bdd":
            return self._cpre_bdd(S, cand)
        return self._explicit().cpre(S, cand)

    def valid_inputs(self, s, S):
        return self._explicit().valid_inputs(s, S)

    def successors(self, s, u):
        return self._explicit().successors(s, u)

    def predecessors_hint(self, F):
        return self._explicit().predecessors_hint(F)

    def _state_rel(self, S, next_state: bool):
        N = len(self.subs)
        parts = self.split_state(np.flatnonzero(S))
        names = [f"x{i}n" if next_state else f"x{i}" for i in range(N)]
        return SymbolicRelation.from_tuples(self.layout, names, parts, self.backend, self.manager)

    def _cpre_bdd(self, S, cand=None):
        """Symbolic predecessor: some admissible input with all successors in ``S``."""
        N = len(self.subs)
        mgr = self.manager
        Sn = self._state_rel(S, True)
        leave = exists(difference(self.T, Sn), [f"x{i}n" for i in range(N)])
        good = difference(self.adm, leave)
        pre = exists(good, [f"u{i}" for i in range(N)])
        mask = np.zeros(self.n_states, dtype=bool)
        rows = pre.tuples()
        if len(rows):
            mask[self.join_state(rows[:, self._columns(pre, "x")])] = True
        if mgr is not None and len(mgr) > 1 << 20:
            mgr.collect([self.M.root, self.T.root, self.adm.root])
        return mask if cand is None else mask[np.asarray(cand, dtype=np.int64)]

    def export_bdd(self, path) -> None:
        rel = self.T.to_backend("bdd", self.manager if self.backend == "bdd" else None)
        rel.manager.export(path, {"T": rel.root})


class ExplicitComposed:
    """Admissible pairs and their successor lists in CSR form."""

    def __init__(self, n_states, pair_state, pair_input, ptr, succ):
        self.n_states = n_states
        self.pair_state = pair_state
        self.pair_input = pair_input
        self.ptr = ptr
        self.succ = succ
        self.state_ptr = np.searchsorted(pair_state, np.arange(n_states + 1))

    @classmethod
    def from_tuples(cls, comp, rows):
        rows = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
        key = rows[:, 0] * comp.n_inputs + rows[:, 1]
        first = np.ones(len(rows), dtype=bool)
        first[1:] = key[1:] != key[:-1]
        starts = np.flatnonzero(first)
        ptr = np.append(starts, len(rows)).astype(np.int64)
        return cls(comp.n_states, rows[starts, 0], rows[starts, 1], ptr, rows[:, 2].copy())

    def pair_ok(self, S):
        if len(self.succ) == 0:
            return np.zeros(0, dtype=bool)
        return np.minimum.reduceat(S[self.succ].astype(np.uint8), self.ptr[:-1]).astype(bool)

    def cpre(self, S, cand=None):
        ok = self.pair_ok(np.asarray(S, dtype=bool))
        mask = np.zeros(self.n_states, dtype=bool)
        mask[self.pair_state[ok]] = True
        return mask if cand is None else mask[np.asarray(cand, dtype=np.int64)]

    def valid_inputs(self, s, S):
        a, b = self.state_ptr[s], self.state_ptr[s + 1]
        out = []
        for p in range(a, b):
            if np.all(S[self.succ[self.ptr[p]:self.ptr[p + 1]]]):
                out.append(self.pair_input[p])
        return np.asarray(out, dtype=np.int64)

    def successors(self, s, u):
        a, b = self.state_ptr[s], self.state_ptr[s + 1]
        p = a + np.searchsorted(self.pair_input[a:b], u)
        if p >= b or self.pair_input[p] != u:
            return np.zeros(0, dtype=np.int64)
        return self.succ[self.ptr[p]:self.ptr[p + 1]]

    def predecessors_hint(self, F):
        hit = np.zeros(len(self.pair_state), dtype=bool)
        if len(self.succ):
            hit = np.maximum.reduceat(F[self.succ].astype(np.uint8), self.ptr[:-1]).astype(bool)
        mask = np.zeros(self.n_states, dtype=bool)
        mask[self.pair_state[hit]] = True
        return mask


# ---------------------------------------------------------------------------
# factored backend

def prefix_sum(S: np.ndarray, shape) -> np.ndarray:
    P = np.zeros(tuple(int(c) + 1 for c in shape), dtype=np.int64)
    P[(slice(1, None),) * len(shape)] = np.asarray(S, dtype=np.int64).reshape(shape)
    for k in range(len(shape)):
        np.cumsum(P, axis=k, out=P)
    return P.ravel()


class FactoredComposed(ComposedAbstraction):
    backend = "factored"

    def __init__(self, subs, ia, channels=None, batch: int = 1 << 14):
        super().__init__(subs, ia, channels)
        N = len(subs)
        self.batch = batch
        lo, hi, blk, toff, boff = [], [], [], [0], [0]
        for i, sub in enumerate(subs):
            nx, nu = sub.state_grid.size, sub.input_grid.size
            x, u, wf = np.meshgrid(np.arange(nx), np.arange(nu), np.arange(self.nw), indexing="ij")
            t = sub.triple(x.ravel(), u.ravel(), self.wproj[i][wf.ravel()])
            lo.append(sub.lo[t].ravel())
            hi.append(sub.hi[t].ravel())
            blk.append(sub.blocked[t])
            toff.append(toff[-1] + lo[-1].size)
            boff.append(boff[-1] + blk[-1].size)
        self.lo = np.concatenate(lo).astype(np.int32)
        self.hi = np.concatenate(hi).astype(np.int32)
        self.blk = np.concatenate(blk).astype(np.uint8)
        self.tab_off = np.asarray(toff[:-1], dtype=np.int64)
        self.blk_off = np.asarray(boff[:-1], dtype=np.int64)
        self.counts = self.state_grid.counts.astype(np.int64)
        # strides of the (count+1)^d prefix-sum table; only usable when it fits
        strides = [1] * len(self.counts)
        for k in range(len(self.counts) - 2, -1, -1):
            strides[k] = strides[k + 1] * (int(self.counts[k + 1]) + 1)
        psize = strides[0] * (int(self.counts[0]) + 1)
        self.pstr = np.asarray(strides, dtype=np.int64) if psize < 2**62 else None
        self._reach = None
        self._pcache: dict[int, tuple] = {}

    def _wcsr(self, states):
        klo, khi = self.ia.query(states)
        ptr, idx = _box_members(klo, khi, self.ia.output_grid)
        return ptr, idx.astype(np.int32)

    def _prefix(self, S):
        if self.pstr is None:
            raise MemoryError("state grid too large for a dense prefix-sum table")
        # only read-only masks are cached: a writable one may change in place
        if S.flags.writeable:
            return prefix_sum(S, self.counts)
        hit = self._pcache.get(id(S))
        if hit is not None and hit[0] is S:
            return hit[1]
        P = prefix_sum(S, self.counts)
        if len(self._pcache) >= 64:
            self._pcache.pop(next(iter(self._pcache)))
        self._pcache[id(S)] = (S, P)
        return P

    def cpre(self, S, cand=None):
        S = np.ascontiguousarray(S, dtype=np.uint8)
        cand = np.arange(self.n_states) if cand is None else np.asarray(cand, dtype=np.int64)
        P = self._prefix(S)
        out = np.zeros(len(cand), dtype=np.uint8)
        first = np.zeros(len(cand), dtype=np.int64)
        for a in range(0, len(cand), self.batch):
            c = np.ascontiguousarray(cand[a:a + self.batch])
            wptr, widx = self._wcsr(c)
            kernels.cpre_factored(
                c, self.counts, self.sub_axes, self.nu, self.nw, self.tab_off, self.lo, self.hi,
                self.blk_off, self.blk, wptr, widx, S, P, self.pstr,
                out[a:a + self.batch], first[a:a + self.batch],
            )
        return out.astype(bool)

    def valid_input_mask(self, states, S) -> np.ndarray:
        if S.dtype != np.uint8 or not S.flags.c_contiguous:
            S = np.ascontiguousarray(S, dtype=np.uint8)
        states = np.asarray(states, dtype=np.int64)
        P = self._prefix(S)
        mask = np.zeros((len(states), self.n_inputs), dtype=np.uint8)
        step = max(1, self.batch // 16)
        for a in range(0, len(states), step):
            c = np.ascontiguousarray(states[a:a + step])
            wptr, widx = self._wcsr(c)
            buf = np.zeros(len(c) * self.n_inputs, dtype=np.uint8)
            kernels.cpre_factored(
                c, self.counts, self.sub_axes, self.nu, self.nw, self.tab_off, self.lo, self.hi,
                self.blk_off, self.blk, wptr, widx, S, P, self.pstr,
                np.zeros(len(c), np.uint8), np.zeros(len(c), np.int64), buf,
            )
            mask[a:a + len(c)] = buf.reshape(len(c), self.n_inputs)
        return mask.astype(bool)

    def valid_inputs(self, s, S):
        return np.flatnonzero(self.valid_input_mask([s], S)[0])

    def _boxes(self, s, u):
        """Per-w successor boxes of ``(s, u)`` or ``None`` when blocked."""
        xi = self.split_state(s)[0]
        ui = self.split_input(u)[0]
        wptr, widx = self._wcsr(np.array([s]))
        boxes = []
        for w in widx:
            blo, bhi = [], []
            for i in range(len(self.subs)):
                t = (xi[i] * self.nu[i] + ui[i]) * self.nw + w
                if self.blk[self.blk_off[i] + t]:
                    return None
                dx = self.sub_axes[i + 1] - self.sub_axes[i]
                base = self.tab_off[i] + t * dx
                blo += list(self.lo[base:base + dx])
                bhi += list(self.hi[base:base + dx])
            boxes.append((blo, bhi))
        return boxes

    def successors(self, s, u):
        boxes = self._boxes(s, u)
        if not boxes:
            return np.zeros(0, dtype=np.int64)
        lo = np.array([b[0] for b in boxes])
        hi = np.array([b[1] for b in boxes])
        _, idx = _box_members(lo, hi, self.state_grid)
        return np.unique(idx)

    def successor_box(self, s, u):
        """Bounding index box of the successors (``None`` when inadmissible)."""
        boxes = self._boxes(s, u)
        if not boxes:
            return None
        lo = np.min([b[0] for b in boxes], axis=0)
        hi = np.max([b[1] for b in boxes], axis=0)
        return lo, hi

    def _reachability(self):
        """Per-subsystem ``B_i[x, x']``: some unblocked (u, w) box holds ``x'``."""
        if self._reach is None:
            mats = []
            for i, sub in enumerate(self.subs):
                nx = sub.state_grid.size
                B = np.zeros((nx, nx), dtype=bool)
                ok = np.flatnonzero(~sub.blocked)
                ix, _, _ = sub.split(ok)
                ptr, idx = _box_members(sub.lo[ok], sub.hi[ok], sub.state_grid)
                B[np.repeat(ix, np.diff(ptr)), idx] = True
                mats.append(B)
            self._reach = mats
        return self._reach

    def predecessors_hint(self, F):
        """States whose per-subsystem reach sets jointly meet ``F`` (tensor contraction)."""
        shape = tuple(int(n) for n in self.nx)
        G = np.asarray(F, dtype=np.float64).reshape(shape)
        for i, B in enumerate(self._reachability()):
            G = np.moveaxis(np.tensordot(B.astype(np.float64), G, axes=([1], [i])), 0, i)
        return G.ravel() > 0.5

    def transition_tuples(self) -> np.ndarray:
        rows = []
        for s in range(self.n_states):
            for u in range(self.n_inputs):
                for n in self.successors(s, u):
                    rows.append((s, u, n))
        return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


def check_composition_soundness(comp: ComposedAbstraction, network, n_trials: int, seed: int = 0):
    """Monte-Carlo one-step check of the composed relation on the concrete network.

    Returns ``(violations, checked)``; states without admissible inputs are skipped.
    """
    rng = np.random.default_rng(seed)
    x = network.interconnection.state_domain.sample(rng, n_trials)
    s = comp.state_grid.quantize(x)
    viol = checked = 0
    for k in range(n_trials):
        adm = comp.admissible_inputs(int(s[k]))
        if len(adm) == 0:
            continue
        u = int(adm[rng.integers(len(adm))])
        xn, _ = network.step(x[k], comp.input_values(u))
        checked += 1
        if not comp.state_grid.in_domain(xn)[0]:
            viol += 1
            continue
        n = int(comp.state_grid.quantize(xn))
        if n not in set(comp.successors(int(s[k]), u).tolist()):
            viol += 1
    return viol, checked


def estimate_tuples(subs, ia) -> float:
    """Rough count of composed transition tuples (for backend selection)."""
    n_states = math.prod(float(s.state_grid.size) for s in subs)
    n_inputs = math.prod(float(s.input_grid.size) for s in subs)
    per = 1.0
    for s in subs:
        per *= float(np.mean(np.prod(s.hi - s.lo + 1, axis=1)))
    return n_states * n_inputs * per


def compose_network(subs, ia, channels=None, backend: str = "auto", manager: BDD | None = None):
    """Composed abstraction of the network (``auto`` picks by size)."""
    if backend == "auto":
        backend = "explicit" if estimate_tuples(subs, ia) <= EXPLICIT_LIMIT else "factored"
        log.info("composition backend: %s", backend)
    if backend in ("explicit", "bdd"):
        return RelationComposed(subs, ia, channels, backend, manager)
    if backend == "factored":
        return FactoredComposed(subs, ia, channels)
    raise ValueError(f"unknown backend {backend}")


__all__ = [
    "ComposedAbstraction",
    "ExplicitComposed",
    "FactoredComposed",
    "GridMismatchError",
    "RelationComposed",
    "TabulatedInterconnection",
    "build_layout",
    "check_composition_soundness",
    "compose_network",
    "estimate_tuples",
    "prefix_sum",
    "project_grid",
]
