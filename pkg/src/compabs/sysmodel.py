"""Black-box subsystems, interconnection maps, benchmarks and data collection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import TOL, Box, DomainError

StepFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
MapFn = Callable[[np.ndarray], np.ndarray]


def _rows(a, dim: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim <= 1 and dim == 1:
        return a.reshape(-1, 1)
    return np.atleast_2d(a).reshape(-1, dim)


@dataclass(frozen=True)
class BlackBoxSubsystem:
    """Deterministic one-step simulator ``(x, u, w) -> x'``.

    ``step`` is vectorized: it takes arrays of shape ``(n, dim)`` and returns
    ``(n, state_dim)``.  Calling the subsystem object handles single points.
    """

    state_domain: Box
    external_input_domain: Box
    internal_input_domain: Box
    step: StepFn
    name: str = "subsystem"

    @property
    def dims(self) -> tuple[int, int, int]:
        return (
            self.state_domain.dim,
            self.external_input_domain.dim,
            self.internal_input_domain.dim,
        )

    def simulate(self, x, u, w) -> np.ndarray:
        dx, du, dw = self.dims
        x, u, w = _rows(x, dx), _rows(u, du), _rows(w, dw)
        n = max(len(x), len(u), len(w))
        x = np.broadcast_to(x, (n, dx))
        u = np.broadcast_to(u, (n, du))
        w = np.broadcast_to(w, (n, dw))
        return np.asarray(self.step(x, u, w), dtype=float).reshape(n, dx)

    def __call__(self, x, u, w) -> np.ndarray:
        return self.simulate(x, u, w)[0]


@dataclass(frozen=True)
class BlackBoxInterconnection:
    """Static map from the stacked network state to the internal inputs."""

    state_domain: Box
    output_domain: Box
    map: MapFn
    name: str = "interconnection"

    def evaluate(self, x) -> np.ndarray:
        x = _rows(x, self.state_domain.dim)
        return np.asarray(self.map(x), dtype=float).reshape(len(x), self.output_domain.dim)

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(x)[0]


# ---------------------------------------------------------------------------
# benchmark dynamics

def _check(name: str, v: np.ndarray, lo: float, hi: float) -> None:
    if np.any(v < lo - TOL) or np.any(v > hi + TOL) or not np.all(np.isfinite(v)):
        raise DomainError(f"{name} outside [{lo}, {hi}]")


def step_min_benchmark(x, u, w):
    """Saturated contraction ``min(0.75 (x + u), w + 1, 32)``."""
    x, u, w = (np.asarray(v, dtype=float) for v in (x, u, w))
    _check("x", x, 0.0, 32.0)
    _check("u", u, 0.0, 7.0)
    _check("w", w, 0.0, 32.0)
    out = np.minimum(np.minimum(0.75 * (x + u), w + 1.0), 32.0)
    return out if out.ndim else float(out)


def glog(a, b, x):
    """Generalized logistic curve with range (0, 32) centred on ``(a + b) / 2``."""
    x = np.asarray(x, dtype=float)
    out = 32.0 / (1.0 + np.exp(-0.2 * (x - (b + a) / 2.0)))
    return out if out.ndim else float(out)


def step_logistic_benchmark(x, u, w, a: float = 0.0, b: float = 32.0):
    """``glog(a, b, x + u + 0.1 (x - w))``."""
    x, u, w = (np.asarray(v, dtype=float) for v in (x, u, w))
    _check("x", x, 0.0, 32.0)
    _check("u", u, -2.0, 2.0)
    _check("w", w, 0.0, 32.0)
    return glog(a, b, x + u + 0.1 * (x - w))


def min_subsystem() -> BlackBoxSubsystem:
    return BlackBoxSubsystem(
        Box([0.0], [32.0]),
        Box([0.0], [7.0]),
        Box([0.0], [32.0]),
        lambda x, u, w: step_min_benchmark(x, u, w),
        name="min",
    )


def logistic_subsystem(a: float = 0.0, b: float = 32.0) -> BlackBoxSubsystem:
    return BlackBoxSubsystem(
        Box([0.0], [32.0]),
        Box([-2.0], [2.0]),
        Box([0.0], [32.0]),
        lambda x, u, w: step_logistic_benchmark(x, u, w, a, b),
        name="logistic",
    )


def max_interconnection(n: int) -> BlackBoxInterconnection:
    return BlackBoxInterconnection(
        Box([0.0] * n, [32.0] * n),
        Box([0.0], [32.0]),
        lambda x: np.max(x, axis=1, keepdims=True),
        name="max",
    )


def average_interconnection(n: int) -> BlackBoxInterconnection:
    return BlackBoxInterconnection(
        Box([0.0] * n, [32.0] * n),
        Box([0.0], [32.0]),
        lambda x: np.mean(x, axis=1, keepdims=True),
        name="average",
    )


@dataclass
class Network:
    """Subsystems plus the map feeding their internal inputs.

    ``channels[i]`` lists the interconnection output components that form the
    internal input of subsystem ``i`` (all subsystems of the benchmarks read
    the single shared channel 0).
    """

    subsystems: list[BlackBoxSubsystem]
    interconnection: BlackBoxInterconnection
    channels: list[list[int]]

    @property
    def n(self) -> int:
        return len(self.subsystems)

    def state_slices(self) -> list[slice]:
        out, k = [], 0
        for s in self.subsystems:
            d = s.state_domain.dim
            out.append(slice(k, k + d))
            k += d
        return out

    def input_slices(self) -> list[slice]:
        out, k = [], 0
        for s in self.subsystems:
            d = s.external_input_domain.dim
            out.append(slice(k, k + d))
            k += d
        return out

    def step(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        """One network step; returns ``(x_next, w)`` for stacked ``x`` and ``u``."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        w = self.interconnection(x)
        nxt = [
            sub(x[sx], u[su], w[ch])
            for sub, sx, su, ch in zip(
                self.subsystems, self.state_slices(), self.input_slices(), self.channels
            )
        ]
        return np.concatenate(nxt), w


def benchmark_network(benchmark: int, n: int, a: float = 0.0, b: float = 32.0) -> Network:
    if benchmark == 1:
        subs = [min_subsystem() for _ in range(n)]
        ic = max_interconnection(n)
    elif benchmark == 2:
        subs = [logistic_subsystem(a, b) for _ in range(n)]
        ic = average_interconnection(n)
    else:
        raise ValueError(f"unknown benchmark {benchmark}")
    return Network(subs, ic, [[0] for _ in range(n)])


# ---------------------------------------------------------------------------
# datasets

def _write_csv(path, header: list[str], data: np.ndarray) -> None:
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(header), comments="")


def _read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


@dataclass
class SubsystemDataset:
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    x_next: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def header(self) -> list[str]:
        cols = []
        for name, a in (("x", self.x), ("u", self.u), ("w", self.w), ("xn", self.x_next)):
            cols += [f"{name}{k + 1}" for k in range(a.shape[1])]
        return cols

    def to_csv(self, path) -> None:
        _write_csv(path, self.header(), np.hstack([self.x, self.u, self.w, self.x_next]))

    @classmethod
    def from_csv(cls, path) -> "SubsystemDataset":
        header, data = _read_csv(path)
        parts = {}
        for name in ("x", "u", "w", "xn"):
            idx = [i for i, h in enumerate(header) if h.rstrip("0123456789") == name]
            parts[name] = data[:, idx]
        return cls(parts["x"], parts["u"], parts["w"], parts["xn"])


@dataclass
class InterconnectionDataset:
    x: np.ndarray
    w: np.ndarray
    n_fit: int
    _tree: cKDTree | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 1 <= self.n_fit <= len(self.x):
            raise ValueError("fitting subset size must lie in [1, n_samples]")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def fit_x(self) -> np.ndarray:
        return self.x[: self.n_fit]

    @property
    def fit_w(self) -> np.ndarray:
        return self.w[: self.n_fit]

    def nearest(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Infinity-norm distance and index of the nearest stored sample."""
        if self._tree is None:
            self._tree = cKDTree(self.x)
        d, i = self._tree.query(np.atleast_2d(points), k=1, p=np.inf)
        return d, i

    def to_csv(self, path) -> None:
        header = [f"x{k + 1}" for k in range(self.x.shape[1])]
        header += [f"w{k + 1}" for k in range(self.w.shape[1])]
        header.append("fit")
        flag = (np.arange(len(self.x)) < self.n_fit).astype(float)[:, None]
        _write_csv(path, header, np.hstack([self.x, self.w, flag]))

    @classmethod
    def from_csv(cls, path) -> "InterconnectionDataset":
        header, data = _read_csv(path)
        xi = [i for i, h in enumerate(header) if h.startswith("x")]
        wi = [i for i, h in enumerate(header) if h.startswith("w")]
        return cls(data[:, xi], data[:, wi], int(data[:, -1].sum()))


def subgrid_count(n_c: int, dim: int) -> int:
    """Smallest ``m`` with ``m ** dim >= n_c``."""
    if n_c < 1:
        raise ValueError("need at least one sample per cell")
    m = max(1, int(math.floor(n_c ** (1.0 / dim))))
    while m**dim < n_c:
        m += 1
    while m > 1 and (m - 1) ** dim >= n_c:
        m -= 1
    return m


def subgrid_points(cell: Box, m: int) -> np.ndarray:
    """Centers of the ``m ** dim`` equal sub-cells of ``cell``."""
    axes = [
        lo + (np.arange(m) + 0.5) * (hi - lo) / m for lo, hi in zip(cell.lower, cell.upper)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, cell.dim)


def collect_subsystem_cell_data(
    sys: BlackBoxSubsystem, cell: tuple, eta_x, eta_w, n_c: int
) -> SubsystemDataset:
    """Sample a cell ``(x_hat, u_hat, w_hat)`` at its sub-grid centers.

    The sub-grid covers the part of ``Phi_{eta_x/2}(x_hat)`` inside the state
    domain, with ``m = subgrid_count(n_c, dim)`` points per dimension.
    """
    x_hat, u_hat, w_hat = (np.atleast_1d(np.asarray(v, dtype=float)) for v in cell)
    eta_x = np.broadcast_to(np.asarray(eta_x, dtype=float), x_hat.shape)
    m = subgrid_count(n_c, x_hat.size)
    full = Box(x_hat - eta_x / 2, x_hat + eta_x / 2)
    clipped = full.intersect(sys.state_domain)
    if clipped is None:
        raise DomainError(f"cell at {x_hat} does not meet the state domain")
    if n_c == 1:
        xs = x_hat[None, :]
    else:
        xs = subgrid_points(clipped, m)
    n = len(xs)
    us = np.broadcast_to(u_hat, (n, u_hat.size)).copy()
    ws = np.broadcast_to(w_hat, (n, w_hat.size)).copy()
    xn = sys.simulate(xs, us, ws)
    return SubsystemDataset(xs, us, ws, xn)


def collect_interconnection_data(
    ic: BlackBoxInterconnection, n_samples: int, seed: int, n_fit: int | None = None
) -> InterconnectionDataset:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    x = ic.state_domain.sample(rng, n_samples)
    w = ic.evaluate(x)
    return InterconnectionDataset(x, w, n_samples if n_fit is None else min(n_fit, n_samples))


def stack_domains(boxes: Sequence[Box]) -> Box:
    return Box(np.concatenate([b.lower for b in boxes]), np.concatenate([b.upper for b in boxes]))
