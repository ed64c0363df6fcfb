"""Sparse linear surrogate of the interconnection map and its abstraction.

The map is approximated by a lasso fit ``w ~ M x``; ``M`` is factored into
layers with bounded fan-in by introducing intermediate variables, and the
abstraction propagates intervals through the layers with an error radius
that accounts for the surrogate mismatch.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .formats import write_matrix_csv, write_relation
from .geometry import TOL, UniformGrid
from .sysmodel import BlackBoxInterconnection, InterconnectionDataset

log = logging.getLogger(__name__)

MEMO_LIMIT = 1 << 22


# ---------------------------------------------------------------------------
# lasso

@dataclass(frozen=True)
class LinearEstimate:
    matrix: np.ndarray  # (n_outputs, n_inputs)
    alpha: float
    residuals: np.ndarray
    sweeps: int = 0

    def __call__(self, x) -> np.ndarray:
        return np.atleast_2d(x) @ self.matrix.T


def _soft(v: float, t: float) -> float:
    if v > t:
        return v - t
    if v < -t:
        return v + t
    return 0.0


def lasso_objective(X, W, M, alpha) -> float:
    R = W - X @ M.T
    return float(np.sum(R * R) + alpha * np.abs(M).sum())


def _as_xy(data):
    if isinstance(data, InterconnectionDataset):
        return data.fit_x, data.fit_w
    X, W = data
    X = np.atleast_2d(np.asarray(X, dtype=float))
    W = np.asarray(W, dtype=float).reshape(len(X), -1)
    return X, W


def fit_lasso(
    data, alpha: float, max_sweeps: int = 10_000, tol: float = 1e-10, history: list | None = None
) -> LinearEstimate:
    """Row-wise lasso ``min |w - X m|^2 + alpha |m|_1`` by coordinate descent.

    ``data`` is an :class:`InterconnectionDataset` (its fitting subset is
    used) or a pair ``(X, W)``.  With ``alpha = 0`` the problem is ordinary
    least squares and is solved directly (minimum-norm when rank deficient).
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    X, W = _as_xy(data)
    n, d = X.shape
    if n < 1:
        raise ValueError("need at least one sample")
    rank = np.linalg.matrix_rank(X) if n > 0 else 0
    if rank < d:
        warnings.warn(f"design matrix has rank {rank} < {d}", RuntimeWarning, stacklevel=2)
    if alpha == 0:
        M = np.linalg.lstsq(X, W, rcond=None)[0].T
        R = W - X @ M.T
        return LinearEstimate(M, 0.0, np.max(np.abs(R), axis=1), 0)

    col2 = np.sum(X * X, axis=0)
    M = np.zeros((W.shape[1], d))
    sweeps = 0
    for i in range(W.shape[1]):
        m = M[i]
        r = W[:, i].copy()
        for sweep in range(max_sweeps):
            change = 0.0
            for j in range(d):
                if col2[j] == 0.0:
                    continue
                old = m[j]
                rho = X[:, j] @ r + col2[j] * old
                new = _soft(rho, alpha / 2.0) / col2[j]
                if new != old:
                    r -= X[:, j] * (new - old)
                    m[j] = new
                    change = max(change, abs(new - old))
            if history is not None and i == 0:
                history.append(lasso_objective(X, W[:, :1], m[None, :], alpha))
            if change < tol:
                break
        sweeps = max(sweeps, sweep + 1)
    R = W - X @ M.T
    return LinearEstimate(M, float(alpha), np.max(np.abs(R), axis=1), sweeps)


def cross_validate_alpha(data, alpha_grid, folds: int = 5) -> float:
    """Grid value with the lowest mean held-out squared error (ties: smallest)."""
    X, W = _as_xy(data)
    grid = sorted(float(a) for a in alpha_grid)
    if not grid:
        raise ValueError("alpha grid is empty")
    if folds < 2:
        raise ValueError("need at least two folds")
    if len(X) < folds:
        raise ValueError(f"{len(X)} samples cannot fill {folds} folds")
    if len(grid) == 1:
        return grid[0]
    parts = np.array_split(np.arange(len(X)), folds)
    scores = []
    for a in grid:
        err = 0.0
        for k in range(folds):
            test = parts[k]
            train = np.concatenate([p for j, p in enumerate(parts) if j != k])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                est = fit_lasso((X[train], W[train]), a)
            R = W[test] - X[test] @ est.matrix.T
            err += float(np.mean(R * R))
        scores.append(err / folds)
    scores = np.asarray(scores)
    best = scores.min()
    tie = 1e-12 * max(1.0, abs(best))
    return grid[int(np.flatnonzero(scores <= best + tie)[0])]


def error_radius(x_hat, data: InterconnectionDataset, M, L_M: float, cell_radius: float = 0.0):
    """Surrogate error bound at representative points.

    ``L_M (|x_hat - x_l| + cell_radius) + |w_l - M x_hat|`` with ``x_l`` the
    nearest stored sample in the infinity norm.  With ``cell_radius`` equal
    to the half-width of the cell of ``x_hat`` the bound covers the whole cell.
    """
    if len(data) == 0:
        raise ValueError("empty interconnection dataset")
    M = np.atleast_2d(M)
    pts = np.atleast_2d(np.asarray(x_hat, dtype=float))
    dist, idx = data.nearest(pts)
    res = np.max(np.abs(data.w[idx] - pts @ M.T), axis=1)
    out = L_M * (dist + cell_radius) + res
    return out if np.ndim(x_hat) > 1 else float(out[0])


# ---------------------------------------------------------------------------
# decomposition

@dataclass
class Layer:
    inputs: list[str]
    outputs: list[str]
    matrix: np.ndarray  # (len(outputs), len(inputs))


@dataclass
class WdagDecomposition:
    n_inputs: int
    n_outputs: int
    sigma: int
    mode: str
    sources: dict[str, list[tuple[str, float]]]
    layers: list[Layer]
    intermediates: list[str] = field(default_factory=list)

    @property
    def inputs(self) -> list[str]:
        return [f"x{j}" for j in range(self.n_inputs)]

    @property
    def outputs(self) -> list[str]:
        return [f"w{i}" for i in range(self.n_outputs)]

    def max_indegree(self) -> int:
        return max((len(s) for s in self.sources.values()), default=0)

    def reconstruct(self) -> np.ndarray:
        """Compose the layers back into one matrix (path products summed)."""
        rows = {v: np.eye(self.n_inputs)[j] for j, v in enumerate(self.inputs)}
        for layer in self.layers:
            src = np.array([rows[v] for v in layer.inputs]).reshape(-1, self.n_inputs)
            for k, v in enumerate(layer.outputs):
                rows[v] = layer.matrix[k] @ src
        return np.stack([rows.get(v, np.zeros(self.n_inputs)) for v in self.outputs])

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        vals = {v: x[:, j] for j, v in enumerate(self.inputs)}
        for layer in self.layers:
            src = np.array([vals[v] for v in layer.inputs]).reshape(-1, len(x)).T
            out = src @ layer.matrix.T
            for k, v in enumerate(layer.outputs):
                vals[v] = out[:, k]
        return np.stack([vals.get(v, np.zeros(len(x))) for v in self.outputs], axis=1)

    def save_csv(self, prefix) -> list[str]:
        paths = []
        for k, layer in enumerate(self.layers):
            p = f"{prefix}_layer{k + 1}.csv"
            with open(p, "w") as fh:
                fh.write("output," + ",".join(layer.inputs) + "\n")
                for name, row in zip(layer.outputs, layer.matrix):
                    fh.write(name + "," + ",".join(f"{v:.17g}" for v in row) + "\n")
            paths.append(p)
        return paths


def _groups_tree(n: int, sigma: int) -> int:
    d = math.ceil(n / sigma)
    return d if d <= sigma else sigma


def decompose(M, sigma: int = 4, mode: str = "tree", zero_tol: float = 0.0) -> WdagDecomposition:
    """Factor ``M`` into layers whose nodes have at most ``sigma`` sources.

    ``tree`` splits an over-full node into balanced groups feeding new
    intermediate nodes with weight ``1/d``; ``chain`` peels off one group at a
    time with weight 1.  Source weights are rescaled so that path products
    reproduce ``M``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not 1 <= sigma <= 4:
        raise ValueError("sigma must lie in [1, 4]")
    if mode not in ("tree", "chain"):
        raise ValueError(f"unknown decomposition mode {mode!r}")
    p, n = M.shape
    sources: dict[str, list[tuple[str, float]]] = {}
    for i in range(p):
        sources[f"w{i}"] = [(f"x{j}", float(M[i, j])) for j in range(n) if abs(M[i, j]) > zero_tol]
    if sigma == 1 and any(len(s) > 1 for s in sources.values()):
        raise ValueError("sigma = 1 cannot combine several sources")
    inter: list[str] = []
    pending = [f"w{i}" for i in range(p)]
    while pending:
        v = pending.pop(0)
        src = sources[v]
        if len(src) <= sigma:
            continue
        if mode == "tree":
            d = _groups_tree(len(src), sigma)
            groups = [list(g) for g in np.array_split(np.arange(len(src)), d)]
            scale, carry = float(d), 1.0 / d
        else:
            head = len(src) - sigma + 1
            groups = [list(range(head))] + [[k] for k in range(head, len(src))]
            scale, carry = 1.0, 1.0
        new_src = []
        for g in groups:
            if len(g) == 1:
                new_src.append(src[g[0]])
                continue
            z = f"z{len(inter)}"
            inter.append(z)
            sources[z] = [(src[k][0], src[k][1] * scale) for k in g]
            new_src.append((z, carry))
            pending.append(z)
        sources[v] = new_src

    depth = {f"x{j}": 0 for j in range(n)}

    def dep(v):
        if v not in depth:
            depth[v] = 1 + max((dep(s) for s, _ in sources[v]), default=0)
        return depth[v]

    for v in sources:
        dep(v)
    nodes = sorted(sources, key=lambda v: (depth[v], v[0] != "z", int(v[1:])))
    layers = []
    for lv in range(1, max((depth[v] for v in sources), default=0) + 1):
        outs = [v for v in nodes if depth[v] == lv]
        ins: list[str] = []
        for v in outs:
            for s, _ in sources[v]:
                if s not in ins:
                    ins.append(s)
        mat = np.zeros((len(outs), len(ins)))
        for k, v in enumerate(outs):
            for s, wgt in sources[v]:
                mat[k, ins.index(s)] += wgt
        layers.append(Layer(ins, outs, mat))
    return WdagDecomposition(n, p, sigma, mode, sources, layers, inter)


# ---------------------------------------------------------------------------
# abstraction

@dataclass
class InterconnectionAbstraction:
    """Over-approximation of the map on grid cells, queried on demand."""

    state_grid: UniformGrid
    output_grid: UniformGrid
    decomposition: WdagDecomposition
    data: InterconnectionDataset
    estimate: LinearEstimate
    L_M: float
    eta_z: float
    memo: dict = field(default_factory=dict)
    wlo: np.ndarray | None = None
    whi: np.ndarray | None = None
    clipped: int = 0

    def propagate(self, xm: np.ndarray):
        """Output-grid index boxes ``(lo, hi)`` for state multi-indices ``xm``."""
        xm = np.atleast_2d(np.asarray(xm, dtype=np.int64))
        xv = self.state_grid.center_multi(xm)
        h = float(np.max(self.state_grid.eta)) / 2
        eps = np.atleast_1d(error_radius(xv, self.data, self.estimate.matrix, self.L_M, h))
        eps = eps + 1e-9 * (1.0 + np.abs(eps))
        dec = self.decomposition
        lo = {v: xv[:, j] for j, v in enumerate(dec.inputs)}
        hi = dict(lo)
        ez = self.eta_z
        for li, layer in enumerate(dec.layers):
            P = np.maximum(layer.matrix, 0.0)
            N = np.minimum(layer.matrix, 0.0)
            for k, v in enumerate(layer.outputs):
                memo = self.memo.get(v) if li == 0 else None
                if memo is not None:
                    cols, shape, table = memo
                    flat = np.ravel_multi_index(tuple(xm[:, cols].T), shape)
                    a = b = table[flat]
                else:
                    a = np.zeros(len(xm))
                    b = np.zeros(len(xm))
                    for j, s in enumerate(layer.inputs):
                        if P[k, j]:
                            a = a + P[k, j] * lo[s]
                            b = b + P[k, j] * hi[s]
                        if N[k, j]:
                            a = a + N[k, j] * hi[s]
                            b = b + N[k, j] * lo[s]
                a = a - eps
                b = b + eps
                if v.startswith("z"):
                    # snap to the intermediate lattice and keep the cell radius
                    kl = np.ceil(a / ez - 0.5 - TOL / ez)
                    kh = np.floor(b / ez + 0.5 + TOL / ez)
                    a = kl * ez - ez / 2
                    b = kh * ez + ez / 2
                lo[v], hi[v] = a, b
        wl = np.stack([lo[v] for v in dec.outputs], axis=1)
        wh = np.stack([hi[v] for v in dec.outputs], axis=1)
        klo, khi, empty = self.output_grid.intersecting_range(wl, wh)
        if np.any(empty):
            n = int(empty.sum())
            self.clipped += n
            warnings.warn(f"{n} interconnection boxes miss the output grid; clipped", RuntimeWarning)
            top = self.output_grid.counts - 1
            rawl, rawh, _ = self.output_grid.intersecting_range(wl, wh, clip=False)
            near_lo = np.clip(rawl, 0, top)
            near_hi = np.clip(rawh, 0, top)
            klo = np.where(empty[:, None], np.minimum(near_lo, near_hi), klo)
            khi = np.where(empty[:, None], np.maximum(near_lo, near_hi), khi)
        return klo, khi

    def query(self, states) -> tuple[np.ndarray, np.ndarray]:
        """Boxes for flat state indices (materialized tables when available)."""
        s = np.asarray(states, dtype=np.int64)
        if self.wlo is not None:
            return self.wlo[s], self.whi[s]
        return self.propagate(self.state_grid.multi(s))

    def materialize(self, batch: int = 1 << 16) -> None:
        n = self.state_grid.size
        wlo = np.empty((n, self.output_grid.dim), dtype=np.int32)
        whi = np.empty_like(wlo)
        for start in range(0, n, batch):
            s = np.arange(start, min(start + batch, n))
            a, b = self.propagate(self.state_grid.multi(s))
            wlo[s], whi[s] = a, b
        self.wlo, self.whi = wlo, whi

    def contains(self, states, w_multi) -> np.ndarray:
        lo, hi = self.query(states)
        w = np.atleast_2d(w_multi)
        return np.all((w >= lo) & (w <= hi), axis=1)

    def save(self, path) -> None:
        if self.wlo is None:
            raise RuntimeError("materialize the abstraction before saving it")
        header = {
            "kind": "interconnection",
            "state_grid": self.state_grid.to_dict(),
            "output_grid": self.output_grid.to_dict(),
            "L_M": self.L_M,
            "eta_z": self.eta_z,
        }
        n = self.state_grid.size
        write_relation(path, header, np.arange(n), self.wlo, self.whi, np.zeros(n, dtype=bool))

    def save_matrices(self, prefix) -> list[str]:
        p = f"{prefix}_Mbar.csv"
        write_matrix_csv(p, self.estimate.matrix)
        return [p] + self.decomposition.save_csv(f"{prefix}_MS")


def abstract_interconnection(
    dec: WdagDecomposition,
    state_grid: UniformGrid,
    output_grid: UniformGrid,
    data: InterconnectionDataset,
    estimate: LinearEstimate,
    L_M: float,
    eta_z: float | None = None,
    materialize: bool | None = None,
) -> InterconnectionAbstraction:
    """Layered interval abstraction of the map on ``state_grid`` cells.

    First-layer nodes get lookup tables over the product of their input
    grids (at most ``sigma`` axes); the full state grid is never enumerated
    unless ``materialize`` is requested (default: when it is small).
    """
    if len(data) == 0:
        raise ValueError("empty interconnection dataset")
    if dec.n_inputs != state_grid.dim or dec.n_outputs != output_grid.dim:
        raise ValueError("decomposition does not match the grids")
    ez = float(np.max(state_grid.eta)) if eta_z is None else float(eta_z)
    memo = {}
    if dec.layers:
        first = dec.layers[0]
        for k, v in enumerate(first.outputs):
            cols = [int(s[1:]) for s in first.inputs if first.matrix[k, first.inputs.index(s)] != 0]
            shape = tuple(int(state_grid.counts[c]) for c in cols)
            if not cols or np.prod(shape) > MEMO_LIMIT:
                continue
            axes = [state_grid.axis_points(c) for c in cols]
            coef = [first.matrix[k, first.inputs.index(f"x{c}")] for c in cols]
            table = np.zeros(shape)
            for a, (ax, cf) in enumerate(zip(axes, coef)):
                sh = [1] * len(cols)
                sh[a] = -1
                table = table + cf * ax.reshape(sh)
            memo[v] = (cols, shape, table.ravel())
    ia = InterconnectionAbstraction(
        state_grid, output_grid, dec, data, estimate, float(L_M), ez, memo
    )
    if materialize is None:
        materialize = state_grid.size <= MEMO_LIMIT
    if materialize:
        ia.materialize()
    return ia


def check_interconnection_soundness(
    ic: BlackBoxInterconnection, ia: InterconnectionAbstraction, n_trials: int, seed: int = 0
) -> int:
    rng = np.random.default_rng(seed)
    x = ic.state_domain.sample(rng, n_trials)
    w = ic.evaluate(x)
    s = ia.state_grid.quantize(x)
    wm = ia.output_grid.quantize_multi(w)
    return int(np.sum(~ia.contains(s, wm)))


__all__ = [
    "InterconnectionAbstraction",
    "Layer",
    "LinearEstimate",
    "WdagDecomposition",
    "abstract_interconnection",
    "check_interconnection_soundness",
    "cross_validate_alpha",
    "decompose",
    "error_radius",
    "fit_lasso",
    "lasso_objective",
]
