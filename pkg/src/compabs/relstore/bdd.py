"""A small reduced ordered BDD manager.

Nodes live in parallel lists, level ``i`` is tested before level ``i + 1``,
and ids 0 and 1 are the two terminals.  The unique table makes structurally
equal functions share one id; operation caches are dropped by garbage
collection.
"""
from __future__ import annotations

import sys
from typing import Iterable, Iterator, Sequence

import numpy as np

FALSE = 0
TRUE = 1


class BDD:
    def __init__(self, n_levels: int):
        self.n_levels = int(n_levels)
        self._var = [self.n_levels, self.n_levels]
        self._lo = [0, 1]
        self._hi = [0, 1]
        self._unique: dict[tuple[int, int, int], int] = {}
        self._free: list[int] = []
        self._ite: dict[tuple[int, int, int], int] = {}
        self._ex: dict[tuple[int, frozenset], int] = {}
        if sys.getrecursionlimit() < 10_000:
            sys.setrecursionlimit(10_000)

    # structure ---------------------------------------------------------
    def __len__(self) -> int:
        return len(self._unique)

    def var(self, f: int) -> int:
        return self._var[f]

    def low(self, f: int) -> int:
        return self._lo[f]

    def high(self, f: int) -> int:
        return self._hi[f]

    def mk(self, v: int, lo: int, hi: int) -> int:
        if lo == hi:
            return lo
        key = (v, lo, hi)
        u = self._unique.get(key)
        if u is not None:
            return u
        if self._free:
            u = self._free.pop()
            self._var[u], self._lo[u], self._hi[u] = v, lo, hi
        else:
            u = len(self._var)
            self._var.append(v)
            self._lo.append(lo)
            self._hi.append(hi)
        self._unique[key] = u
        return u

    def literal(self, level: int, positive: bool = True) -> int:
        return self.mk(level, FALSE, TRUE) if positive else self.mk(level, TRUE, FALSE)

    # boolean operations ------------------------------------------------
    def ite(self, f: int, g: int, h: int) -> int:
        if f == TRUE:
            return g
        if f == FALSE:
            return h
        if g == h:
            return g
        if g == TRUE and h == FALSE:
            return f
        key = (f, g, h)
        r = self._ite.get(key)
        if r is not None:
            return r
        v = min(self._var[f], self._var[g], self._var[h])
        f0, f1 = self._cof(f, v)
        g0, g1 = self._cof(g, v)
        h0, h1 = self._cof(h, v)
        r = self.mk(v, self.ite(f0, g0, h0), self.ite(f1, g1, h1))
        self._ite[key] = r
        return r

    def _cof(self, f: int, v: int) -> tuple[int, int]:
        if self._var[f] == v:
            return self._lo[f], self._hi[f]
        return f, f

    def and_(self, f: int, g: int) -> int:
        return self.ite(f, g, FALSE)

    def or_(self, f: int, g: int) -> int:
        return self.ite(f, TRUE, g)

    def not_(self, f: int) -> int:
        return self.ite(f, FALSE, TRUE)

    def diff(self, f: int, g: int) -> int:
        return self.ite(g, FALSE, f)

    def conjoin_all(self, fs: Iterable[int]) -> int:
        r = TRUE
        for f in fs:
            r = self.and_(r, f)
            if r == FALSE:
                break
        return r

    def exists(self, f: int, levels: Iterable[int]) -> int:
        lv = frozenset(levels)
        if not lv:
            return f
        return self._exists(f, lv, max(lv))

    def _exists(self, f: int, lv: frozenset, top: int) -> int:
        if f <= TRUE or self._var[f] > top:
            return f
        key = (f, lv)
        r = self._ex.get(key)
        if r is not None:
            return r
        v = self._var[f]
        lo = self._exists(self._lo[f], lv, top)
        hi = self._exists(self._hi[f], lv, top)
        r = self.or_(lo, hi) if v in lv else self.mk(v, lo, hi)
        self._ex[key] = r
        return r

    def forall(self, f: int, levels: Iterable[int]) -> int:
        return self.not_(self.exists(self.not_(f), levels))

    # construction ------------------------------------------------------
    def cube(self, levels: Sequence[int], bits: Sequence[int]) -> int:
        r = TRUE
        for lv, b in sorted(zip(levels, bits), reverse=True):
            r = self.mk(lv, FALSE, r) if b else self.mk(lv, r, FALSE)
        return r

    def from_bits(self, levels: Sequence[int], bits: np.ndarray) -> int:
        """Disjunction of the cubes given row-wise in ``bits`` over ``levels``."""
        levels = np.asarray(levels, dtype=np.int64)
        order = np.argsort(levels)
        levels = levels[order]
        B = np.asarray(bits, dtype=np.uint8).reshape(-1, len(levels))[:, order]
        if len(B) == 0:
            return FALSE
        B = np.unique(B, axis=0)
        L = len(levels)
        memo: dict = {}

        def build(a: int, b: int, col: int) -> int:
            if col == L:
                return TRUE
            key = (a, b, col)
            if key in memo:
                return memo[key]
            colv = B[a:b, col]
            split = a + int(np.searchsorted(colv, 1))
            lo = build(a, split, col + 1) if split > a else FALSE
            hi = build(split, b, col + 1) if b > split else FALSE
            r = self.mk(int(levels[col]), lo, hi)
            memo[key] = r
            return r

        return build(0, len(B), 0)

    # queries -----------------------------------------------------------
    def evaluate(self, f: int, assignment: dict[int, int]) -> bool:
        while f > TRUE:
            f = self._hi[f] if assignment.get(self._var[f], 0) else self._lo[f]
        return f == TRUE

    def satcount(self, f: int, levels: Sequence[int]) -> int:
        """Number of assignments to ``levels`` satisfying ``f`` (support within)."""
        lv = sorted(levels)
        pos = {v: i for i, v in enumerate(lv)}
        n = len(lv)
        memo: dict[int, int] = {}

        def rank(g):
            return n if g <= TRUE else pos[self._var[g]]

        def count(g: int) -> int:
            if g == FALSE:
                return 0
            if g == TRUE:
                return 1
            if g in memo:
                return memo[g]
            r = rank(g)
            lo, hi = self._lo[g], self._hi[g]
            c = count(lo) * (1 << (rank(lo) - r - 1)) + count(hi) * (1 << (rank(hi) - r - 1))
            memo[g] = c
            return c

        return count(f) * (1 << rank(f)) if f != FALSE else 0

    def cubes(self, f: int, levels: Sequence[int]) -> Iterator[np.ndarray]:
        """Satisfying assignments over ``levels`` as bit rows (expanded)."""
        lv = sorted(levels)
        n = len(lv)
        bits = np.zeros(n, dtype=np.uint8)

        def walk(g: int, i: int):
            if g == FALSE:
                return
            if i == n:
                if g == TRUE:
                    yield bits.copy()
                return
            if g > TRUE and self._var[g] == lv[i]:
                bits[i] = 0
                yield from walk(self._lo[g], i + 1)
                bits[i] = 1
                yield from walk(self._hi[g], i + 1)
            else:
                for b in (0, 1):
                    bits[i] = b
                    yield from walk(g, i + 1)

        yield from walk(f, 0)

    def support(self, f: int) -> set[int]:
        seen, out, stack = set(), set(), [f]
        while stack:
            g = stack.pop()
            if g <= TRUE or g in seen:
                continue
            seen.add(g)
            out.add(self._var[g])
            stack += [self._lo[g], self._hi[g]]
        return out

    def nodes(self, f: int) -> list[tuple[int, int, int, int]]:
        """Reachable internal nodes as ``(id, level, low, high)`` (children first)."""
        seen: set[int] = set()
        out = []

        def visit(g):
            if g <= TRUE or g in seen:
                return
            seen.add(g)
            visit(self._lo[g])
            visit(self._hi[g])
            out.append((g, self._var[g], self._lo[g], self._hi[g]))

        visit(f)
        return out

    def export(self, path, roots: dict[str, int]) -> None:
        """Node-list text format: ``id,level,low,high`` lines, then root lines."""
        with open(path, "w") as fh:
            fh.write(f"# bdd levels={self.n_levels}\n")
            fh.write("id,level,low,high\n")
            done: set[int] = set()
            for r in roots.values():
                for n in self.nodes(r):
                    if n[0] not in done:
                        done.add(n[0])
                        fh.write("%d,%d,%d,%d\n" % n)
            for name, r in roots.items():
                fh.write(f"root,{name},{r}\n")

    @staticmethod
    def import_(path) -> tuple["BDD", dict[str, int]]:
        with open(path) as fh:
            first = fh.readline()
            n_levels = int(first.split("levels=")[1])
            fh.readline()
            mgr = BDD(n_levels)
            remap = {0: 0, 1: 1}
            roots = {}
            for line in fh:
                parts = line.strip().split(",")
                if parts[0] == "root":
                    roots[parts[1]] = remap[int(parts[2])]
                    continue
                i, v, lo, hi = map(int, parts)
                remap[i] = mgr.mk(v, remap[lo], remap[hi])
        return mgr, roots

    # memory ------------------------------------------------------------
    def collect(self, roots: Iterable[int]) -> int:
        """Mark-sweep: free every node unreachable from ``roots``."""
        marked = {0, 1}
        stack = list(roots)
        while stack:
            g = stack.pop()
            if g in marked:
                continue
            marked.add(g)
            stack += [self._lo[g], self._hi[g]]
        freed = 0
        for key, u in list(self._unique.items()):
            if u not in marked:
                del self._unique[key]
                self._free.append(u)
                freed += 1
        self._ite.clear()
        self._ex.clear()
        return freed
