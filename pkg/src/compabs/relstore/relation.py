"""Finite relations over named integer variables with two interchangeable backends.

``explicit`` keeps a sorted array of unique tuples; ``bdd`` keeps a root in a
shared :class:`BDD` manager with every variable binary-encoded (MSB first) at
levels fixed by the :class:`VariableLayout`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .bdd import BDD, FALSE, TRUE

ROLES = ("state", "next_state", "ext_input", "int_input", "intermediate")


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class Variable:
    name: str
    size: int
    role: str = "state"

    def __post_init__(self):
        if self.size < 1:
            raise LayoutError(f"variable {self.name} needs at least one value")
        if self.role not in ROLES:
            raise LayoutError(f"unknown role {self.role}")

    @property
    def width(self) -> int:
        return max(1, int(self.size - 1).bit_length())


class VariableLayout:
    """Ordered variables and their BDD levels.

    ``interleave`` lists name pairs (typically state and next state) whose bits
    alternate, placed where the first member appears in ``variables``.
    """

    def __init__(self, variables: Sequence[Variable], interleave: Iterable[tuple[str, str]] = ()):
        self.variables = list(variables)
        self.index = {v.name: k for k, v in enumerate(self.variables)}
        if len(self.index) != len(self.variables):
            raise LayoutError("duplicate variable names")
        pairs = dict(interleave)
        second = set(pairs.values())
        lv = 0
        levels: dict[str, list[int]] = {}
        for v in self.variables:
            if v.name in second:
                continue
            if v.name in pairs:
                w = self[pairs[v.name]]
                la, lb = [], []
                for k in range(max(v.width, w.width)):
                    if k < v.width:
                        la.append(lv)
                        lv += 1
                    if k < w.width:
                        lb.append(lv)
                        lv += 1
                levels[v.name], levels[w.name] = la, lb
            else:
                levels[v.name] = list(range(lv, lv + v.width))
                lv += v.width
        self._levels = levels
        self.n_levels = lv

    def __getitem__(self, name: str) -> Variable:
        try:
            return self.variables[self.index[name]]
        except KeyError:
            raise LayoutError(f"unknown variable {name}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.index

    def __eq__(self, other):
        return isinstance(other, VariableLayout) and self.variables == other.variables and (
            self._levels == other._levels
        )

    def __hash__(self):
        return hash(tuple(self.variables))

    def levels(self, name: str) -> list[int]:
        self[name]
        return self._levels[name]

    def sizes(self, names: Sequence[str]) -> tuple[int, ...]:
        return tuple(self[n].size for n in names)

    def canonical(self, names: Iterable[str]) -> tuple[str, ...]:
        names = set(names)
        for n in names:
            self[n]
        return tuple(v.name for v in self.variables if v.name in names)

    def covers(self, other: "VariableLayout") -> bool:
        """Every variable of ``other`` exists here with the same size and levels."""
        return all(
            n in self and self[n] == other[n] and self.levels(n) == other.levels(n)
            for n in other.index
        )

    def encode(self, names: Sequence[str], values: np.ndarray) -> tuple[list[int], np.ndarray]:
        """Levels and bit rows for integer rows ``values`` over ``names``."""
        values = np.asarray(values, dtype=np.int64).reshape(-1, len(names))
        levels: list[int] = []
        cols = []
        for j, n in enumerate(names):
            w = self[n].width
            lv = self.levels(n)
            shifts = np.arange(w - 1, -1, -1)
            cols.append((values[:, j : j + 1] >> shifts) & 1)
            levels += lv
        bits = np.hstack(cols) if cols else np.zeros((len(values), 0), dtype=np.int64)
        return levels, bits.astype(np.uint8)

    def decode(self, names: Sequence[str], bits_by_level: np.ndarray, levels: Sequence[int]) -> np.ndarray:
        pos = {lv: k for k, lv in enumerate(levels)}
        out = np.zeros((len(bits_by_level), len(names)), dtype=np.int64)
        for j, n in enumerate(names):
            for lv in self.levels(n):
                out[:, j] = (out[:, j] << 1) | bits_by_level[:, pos[lv]]
        return out


def _key(rows: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    """Injective int keys for rows (mixed radix, falling back to a void view)."""
    if len(sizes) == 0:
        return np.zeros(len(rows), dtype=np.int64)
    if float(np.prod([float(s) for s in sizes])) < 2.0**62:
        return np.ravel_multi_index(tuple(rows.T), sizes).astype(np.int64)
    r = np.ascontiguousarray(rows, dtype=np.int64)
    return r.view(np.dtype((np.void, r.dtype.itemsize * r.shape[1]))).ravel()


def _unique_rows(rows: np.ndarray) -> np.ndarray:
    if len(rows) == 0 or rows.shape[1] == 0:
        return rows[: min(len(rows), 1)]
    rows = np.asarray(rows, dtype=np.int64)
    lo = rows.min(axis=0)
    span = (rows.max(axis=0) - lo + 1).astype(np.int64)
    if float(np.prod(span.astype(float))) < 2.0**62 and lo.min() >= np.iinfo(np.int64).min // 2:
        keys = np.unique(np.ravel_multi_index(tuple((rows - lo).T), tuple(span)))
        return np.stack(np.unravel_index(keys, tuple(span)), axis=1).astype(np.int64) + lo
    order = np.lexsort(rows.T[::-1])
    r = rows[order]
    keep = np.ones(len(r), dtype=bool)
    keep[1:] = np.any(r[1:] != r[:-1], axis=1)
    return r[keep]


class SymbolicRelation:
    def __init__(self, layout: VariableLayout, names: Sequence[str], backend: str,
                 tuples: np.ndarray | None = None, manager: BDD | None = None, root: int | None = None):
        self.layout = layout
        self.names = tuple(names)
        self.backend = backend
        self._tuples = tuples
        self.manager = manager
        self.root = root

    # construction ------------------------------------------------------
    @classmethod
    def from_tuples(cls, layout, names, tuples, backend: str = "explicit", manager: BDD | None = None):
        canon = layout.canonical(names)
        if len(canon) != len(names):
            raise LayoutError("repeated variable")
        rows = np.asarray(tuples, dtype=np.int64)
        rows = rows.reshape(len(rows), len(names)) if rows.ndim == 2 else rows.reshape(-1, len(names))
        sizes = np.asarray(layout.sizes(names), dtype=np.int64)
        if len(rows) and (np.any(rows < 0) or np.any(rows >= sizes)):
            raise ValueError("tuple value outside its variable range")
        perm = [list(names).index(n) for n in canon]
        rows = _unique_rows(rows[:, perm])
        if backend == "explicit":
            return cls(layout, canon, "explicit", tuples=rows)
        if backend == "bdd":
            mgr = manager if manager is not None else BDD(layout.n_levels)
            if mgr.n_levels < layout.n_levels:
                raise LayoutError("manager has too few levels for the layout")
            if len(canon) == 0:
                root = TRUE if len(rows) else FALSE
            else:
                levels, bits = layout.encode(canon, rows)
                root = mgr.from_bits(levels, bits) if len(rows) else FALSE
            return cls(layout, canon, "bdd", manager=mgr, root=root)
        raise ValueError(f"unknown backend {backend}")

    @classmethod
    def true(cls, layout, backend="explicit", manager=None):
        return cls.from_tuples(layout, (), np.zeros((1, 0), dtype=np.int64), backend, manager)

    @classmethod
    def false(cls, layout, names=(), backend="explicit", manager=None):
        return cls.from_tuples(layout, names, np.zeros((0, len(names)), dtype=np.int64), backend, manager)

    # inspection --------------------------------------------------------
    def _levels(self) -> list[int]:
        return [lv for n in self.names for lv in self.layout.levels(n)]

    def tuples(self) -> np.ndarray:
        """Sorted unique tuples, columns in layout order."""
        if self.backend == "explicit":
            return self._tuples
        levels = sorted(self._levels())
        rows = list(self.manager.cubes(self.root, levels))
        if not rows:
            return np.zeros((0, len(self.names)), dtype=np.int64)
        out = self.layout.decode(self.names, np.asarray(rows), levels)
        return _unique_rows(out)

    def count(self) -> int:
        if self.backend == "explicit":
            return len(self._tuples)
        return self.manager.satcount(self.root, self._levels())

    def __len__(self) -> int:
        return self.count()

    def is_empty(self) -> bool:
        return self.count() == 0 if self.backend == "explicit" else self.root == FALSE

    def contains(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        rows = rows.reshape(len(rows), len(self.names)) if rows.ndim == 2 else rows.reshape(-1, len(self.names))
        sizes = self.layout.sizes(self.names)
        inside = np.all((rows >= 0) & (rows < np.asarray(sizes, dtype=np.int64)), axis=1) if len(
            sizes) else np.ones(len(rows), dtype=bool)
        if self.backend == "explicit":
            hit = np.isin(_key(np.where(inside[:, None], rows, 0), sizes), _key(self._tuples, sizes))
            return hit & inside
        levels, bits = self.layout.encode(self.names, np.where(inside[:, None], rows, 0))
        out = np.empty(len(rows), dtype=bool)
        for k in range(len(rows)):
            out[k] = inside[k] and self.manager.evaluate(self.root, dict(zip(levels, bits[k])))
        return out

    def to_backend(self, backend: str, manager: BDD | None = None) -> "SymbolicRelation":
        if backend == self.backend and (backend == "explicit" or manager in (None, self.manager)):
            return self
        return SymbolicRelation.from_tuples(self.layout, self.names, self.tuples(), backend, manager)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.tuples(), fmt="%d", delimiter=",", header=",".join(self.names), comments="")

    def same_as(self, other: "SymbolicRelation") -> bool:
        if set(self.names) != set(other.names):
            return False
        a = self.tuples()
        b = other.to_backend("explicit").tuples()
        perm = [other.names.index(n) for n in self.names]
        return a.shape == b.shape and np.array_equal(a, _unique_rows(b[:, perm]))


def _check_pair(a: SymbolicRelation, b: SymbolicRelation) -> VariableLayout:
    if a.backend != b.backend:
        raise LayoutError("relations use different backends")
    if a.backend == "bdd" and a.manager is not b.manager:
        raise LayoutError("relations live in different BDD managers")
    if a.layout.covers(b.layout):
        return a.layout
    if b.layout.covers(a.layout):
        return b.layout
    raise LayoutError("incompatible layouts")


def _join(a: SymbolicRelation, b: SymbolicRelation, layout: VariableLayout) -> SymbolicRelation:
    names = layout.canonical(a.names + b.names)
    shared = [n for n in a.names if n in b.names]
    A, B = a._tuples, b._tuples
    sizes = layout.sizes(shared)
    ka = _key(A[:, [a.names.index(n) for n in shared]], sizes)
    kb = _key(B[:, [b.names.index(n) for n in shared]], sizes)
    order = np.argsort(kb, kind="stable")
    kbs = kb[order]
    left = np.searchsorted(kbs, ka, "left")
    cnt = np.searchsorted(kbs, ka, "right") - left
    ra = np.repeat(np.arange(len(A)), cnt)
    start = np.repeat(np.cumsum(cnt) - cnt, cnt)
    rb = order[np.repeat(left, cnt) + np.arange(cnt.sum()) - start]
    cols = []
    for n in names:
        cols.append(A[ra, a.names.index(n)] if n in a.names else B[rb, b.names.index(n)])
    rows = np.stack(cols, axis=1) if cols else np.zeros((len(ra), 0), dtype=np.int64)
    return SymbolicRelation(layout, names, "explicit", tuples=_unique_rows(rows))


def conjoin(a: SymbolicRelation, b: SymbolicRelation) -> SymbolicRelation:
    layout = _check_pair(a, b)
    if a.backend == "explicit":
        return _join(a, b, layout)
    names = layout.canonical(a.names + b.names)
    return SymbolicRelation(layout, names, "bdd", manager=a.manager, root=a.manager.and_(a.root, b.root))


def conjoin_all(rels: Sequence[SymbolicRelation]) -> SymbolicRelation:
    out = rels[0]
    for r in rels[1:]:
        out = conjoin(out, r)
    return out


def exists(rel: SymbolicRelation, names: Iterable[str]) -> SymbolicRelation:
    names = set(names)
    for n in names:
        if n not in rel.names:
            raise LayoutError(f"variable {n} is not in the relation")
    keep = tuple(n for n in rel.names if n not in names)
    if rel.backend == "explicit":
        rows = rel._tuples[:, [rel.names.index(n) for n in keep]]
        return SymbolicRelation(rel.layout, keep, "explicit", tuples=_unique_rows(rows))
    levels = [lv for n in names for lv in rel.layout.levels(n)]
    return SymbolicRelation(rel.layout, keep, "bdd", manager=rel.manager,
                            root=rel.manager.exists(rel.root, levels))


def difference(a: SymbolicRelation, b: SymbolicRelation) -> SymbolicRelation:
    """Tuples of ``a`` whose projection onto ``b``'s variables is not in ``b``."""
    layout = _check_pair(a, b)
    if not set(b.names) <= set(a.names):
        raise LayoutError("difference needs b's variables inside a's")
    if a.backend == "explicit":
        cols = [a.names.index(n) for n in b.names]
        keep = ~b.contains(a._tuples[:, cols])
        return SymbolicRelation(layout, a.names, "explicit", tuples=a._tuples[keep])
    return SymbolicRelation(layout, a.names, "bdd", manager=a.manager, root=a.manager.diff(a.root, b.root))


def union(a: SymbolicRelation, b: SymbolicRelation) -> SymbolicRelation:
    layout = _check_pair(a, b)
    if set(a.names) != set(b.names):
        raise LayoutError("union needs identical variables")
    if a.backend == "explicit":
        perm = [b.names.index(n) for n in a.names]
        rows = _unique_rows(np.vstack([a._tuples, b._tuples[:, perm]]))
        return SymbolicRelation(layout, a.names, "explicit", tuples=rows)
    return SymbolicRelation(layout, a.names, "bdd", manager=a.manager, root=a.manager.or_(a.root, b.root))


__all__ = [
    "LayoutError",
    "SymbolicRelation",
    "Variable",
    "VariableLayout",
    "conjoin",
    "conjoin_all",
    "difference",
    "exists",
    "union",
]
