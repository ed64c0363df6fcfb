"""Hyper-intervals, uniform grids and cell arithmetic.

Representative points of a grid sit at ``lower + j * eta`` for
``j = 0 .. counts - 1``.  Quantization uses half-open cells
``[c - eta/2, c + eta/2)`` (the topmost cell is closed on the right) so that
it is a function; intersection tests use closed cells so that they are
conservative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TOL = 1e-12


class DomainError(ValueError):
    """A point or box lies outside the domain it was checked against."""


def _vec(v, name: str) -> np.ndarray:
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.ndim != 1 or a.size == 0:
        raise ValueError(f"{name} must be a non-empty vector")
    return a


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower, upper):
        lo = _vec(lower, "lower")
        hi = _vec(upper, "upper")
        if lo.shape != hi.shape:
            raise ValueError("lower and upper must have the same length")
        if np.any(lo > hi):
            raise ValueError(f"box lower {lo} exceeds upper {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, point, tol: float = TOL) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lower - tol) and np.all(p <= self.upper + tol))

    def contains_box(self, other: "Box", tol: float = TOL) -> bool:
        return bool(
            np.all(other.lower >= self.lower - tol)
            and np.all(other.upper <= self.upper + tol)
        )

    def intersect(self, other: "Box") -> "Box | None":
        lo = np.maximum(self.lower, other.lower)
        hi = np.minimum(self.upper, other.upper)
        if np.any(lo > hi):
            return None
        return Box(lo, hi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(d["lower"], d["upper"])

    def __eq__(self, other):
        return (
            isinstance(other, Box)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __hash__(self):
        return hash((tuple(self.lower), tuple(self.upper)))

    def __repr__(self):
        return f"Box({self.lower.tolist()}, {self.upper.tolist()})"


def minkowski_inflate(center, radius) -> Box:
    """Return ``center + [-radius, radius]``."""
    c = _vec(center, "center")
    r = np.broadcast_to(_vec(radius, "radius"), c.shape)
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    return Box(c - r, c + r)


@dataclass(frozen=True)
class UniformGrid:
    domain: Box
    eta: np.ndarray
    counts: np.ndarray = field(init=False)

    def __init__(self, domain: Box, eta):
        e = np.broadcast_to(_vec(eta, "eta"), domain.lower.shape).astype(float)
        if np.any(e <= 0):
            raise ValueError("eta must be positive")
        counts = np.floor(domain.width / e + TOL).astype(np.int64) + 1
        last = domain.lower + (counts - 1) * e
        # the topmost cell must reach the upper bound
        if np.any(domain.upper - last > e / 2 + TOL):
            raise ValueError(
                f"cells of spacing {e} do not cover {domain}; choose eta dividing the width"
            )
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "eta", e.copy())
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_bounds(cls, lower, upper, eta) -> "UniformGrid":
        return cls(Box(lower, upper), eta)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def size(self) -> int:
        return math.prod(int(c) for c in self.counts)

    @property
    def shape(self) -> tuple:
        return tuple(int(c) for c in self.counts)

    # index bookkeeping -------------------------------------------------
    def flat(self, multi) -> np.ndarray | int:
        m = np.asarray(multi, dtype=np.int64)
        if m.ndim == 1:
            return int(np.ravel_multi_index(tuple(m), self.shape))
        return np.ravel_multi_index(tuple(m.T), self.shape)

    def multi(self, flat) -> np.ndarray:
        f = np.asarray(flat, dtype=np.int64)
        out = np.stack(np.unravel_index(f, self.shape), axis=-1)
        return out

    def center_multi(self, multi) -> np.ndarray:
        return self.domain.lower + np.asarray(multi, dtype=float) * self.eta

    def center(self, flat) -> np.ndarray:
        return self.center_multi(self.multi(flat))

    def centers(self) -> np.ndarray:
        """All representative points in flat order (only for small grids)."""
        return self.center(np.arange(self.size))

    def axis_points(self, k: int) -> np.ndarray:
        return self.domain.lower[k] + np.arange(self.counts[k]) * self.eta[k]

    def cell(self, flat) -> Box:
        c = self.center(flat)
        return Box(c - self.eta / 2, c + self.eta / 2)

    # quantization ------------------------------------------------------
    def quantize_multi(self, points) -> np.ndarray:
        """Multi-index of the half-open cell containing each point.

        ``points`` has shape ``(dim,)`` or ``(n, dim)``.  Raises
        :class:`DomainError` when a point is outside the domain.
        """
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        lo, hi = self.domain.lower, self.domain.upper
        bad = np.any((p < lo - TOL) | (p > hi + TOL) | ~np.isfinite(p), axis=1)
        if np.any(bad):
            raise DomainError(f"point {p[np.argmax(bad)]} outside {self.domain}")
        t = (p - lo) / self.eta + 0.5 + TOL / self.eta
        k = np.clip(np.floor(t).astype(np.int64), 0, self.counts - 1)
        return k[0] if single else k

    def quantize(self, points):
        k = self.quantize_multi(points)
        return self.flat(k)

    def in_domain(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        lo, hi = self.domain.lower, self.domain.upper
        return np.all((p >= lo - TOL) & (p <= hi + TOL), axis=1)

    # intersection ------------------------------------------------------
    def intersecting_range(self, lower, upper, clip: bool = True):
        """Index ranges of closed cells meeting the boxes ``[lower, upper]``.

        Works on ``(dim,)`` or ``(n, dim)`` arrays.  Returns ``(klo, khi, empty)``
        with inclusive multi-index corners; ``empty`` flags boxes that miss the
        grid entirely.  With ``clip=False`` the ranges refer to the unbounded
        lattice extending the grid.
        """
        a = np.asarray(lower, dtype=float)
        b = np.asarray(upper, dtype=float)
        lo = self.domain.lower
        klo = np.ceil((a - lo) / self.eta - 0.5 - TOL / self.eta).astype(np.int64)
        khi = np.floor((b - lo) / self.eta + 0.5 + TOL / self.eta).astype(np.int64)
        if not clip:
            return klo, khi, np.any(klo > khi, axis=-1)
        klo = np.maximum(klo, 0)
        khi = np.minimum(khi, self.counts - 1)
        empty = np.any(klo > khi, axis=-1)
        return klo, khi, empty

    def cells_intersecting(self, box: Box):
        """Flat indices of all cells whose closed box meets ``box``.

        Returns ``(indices, out_of_domain)``; the flag is set when the box
        misses the grid entirely (indices is then empty).
        """
        klo, khi, empty = self.intersecting_range(box.lower, box.upper)
        if empty:
            return np.empty(0, dtype=np.int64), True
        axes = [np.arange(l, h + 1) for l, h in zip(klo, khi)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        return np.sort(self.flat(mesh)), False

    def range_box(self, klo, khi) -> Box:
        """Union of the closed cells with multi-index in ``[klo, khi]``."""
        return Box(
            self.center_multi(klo) - self.eta / 2, self.center_multi(khi) + self.eta / 2
        )

    def to_dict(self) -> dict:
        return {"domain": self.domain.to_dict(), "eta": self.eta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "UniformGrid":
        return cls(Box.from_dict(d["domain"]), d["eta"])

    def __eq__(self, other):
        return (
            isinstance(other, UniformGrid)
            and self.domain == other.domain
            and np.array_equal(self.eta, other.eta)
        )

    def __hash__(self):
        return hash((self.domain, tuple(self.eta)))

    def __repr__(self):
        return f"UniformGrid({self.domain!r}, eta={self.eta.tolist()}, counts={self.counts.tolist()})"


def product_grid(grids: Sequence[UniformGrid]) -> UniformGrid:
    """Cartesian product of grids (dimensions concatenated in order)."""
    lo = np.concatenate([g.domain.lower for g in grids])
    hi = np.concatenate([g.domain.upper for g in grids])
    eta = np.concatenate([g.eta for g in grids])
    return UniformGrid(Box(lo, hi), eta)
