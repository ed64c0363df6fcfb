"""Pure numpy/Python versions of the hot loops.

Selected automatically when the compiled extension is unavailable; the two
implementations follow the same pivoting and scanning order, so they return
identical results.
"""
from __future__ import annotations

import numpy as np

LP_OK = 0
LP_INFEASIBLE = 1
LP_ITERLIMIT = 2


def covering_lp(A, b, c, ub, tol=1e-10, max_iter=10000):
    """Solve ``min c.t  s.t.  A t >= b, 0 <= t <= ub`` with ``c >= 0``.

    Dual simplex on the primal tableau: the slack basis is dual feasible
    because ``c >= 0``, so no phase one is needed.  Bland's rule (smallest
    basic index leaves, smallest column wins ratio ties) rules out cycling.
    Returns ``(theta, status)``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    rows = m + n
    cols = n + m + n
    T = np.zeros((rows, cols))
    rhs = np.empty(rows)
    T[:m, :n] = -A
    T[np.arange(m), n + np.arange(m)] = 1.0
    rhs[:m] = -b
    T[m + np.arange(n), np.arange(n)] = 1.0
    T[m + np.arange(n), n + m + np.arange(n)] = 1.0
    rhs[m:] = ub
    d = np.zeros(cols)
    d[:n] = c
    basis = n + np.arange(rows)

    status = LP_ITERLIMIT
    for _ in range(max_iter):
        r = -1
        best = -1
        for i in range(rows):
            if rhs[i] < -tol and (best < 0 or basis[i] < best):
                best = basis[i]
                r = i
        if r < 0:
            status = LP_OK
            break
        row = T[r]
        q = -1
        ratio = np.inf
        for j in range(cols):
            a = row[j]
            if a < -tol:
                t = d[j] / -a
                if t < ratio - 1e-12:
                    ratio = t
                    q = j
        if q < 0:
            status = LP_INFEASIBLE
            break
        piv = row[q]
        T[r] /= piv
        rhs[r] /= piv
        col = T[:, q].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        rhs -= col * rhs[r]
        d -= d[q] * T[r]
        basis[r] = q

    theta = np.zeros(n)
    for i in range(rows):
        if basis[i] < n:
            theta[basis[i]] = rhs[i]
    return np.maximum(theta, 0.0), status


def lexmin_cover(A, b, ub, tol=1e-10):
    """Minimize ``sum(t)``, then the last coordinate among the optima."""
    A = np.asarray(A, dtype=float)
    n = A.shape[1]
    theta, st = covering_lp(A, b, np.ones(n), ub, tol)
    if st != LP_OK:
        return theta, st
    v = theta.sum()
    A2 = np.vstack([A, -np.ones((1, n))])
    b2 = np.append(b, -(v + 1e-12 * max(1.0, abs(v))))
    e = np.zeros(n)
    e[-1] = 1.0
    theta2, st2 = covering_lp(A2, b2, e, ub, tol)
    if st2 != LP_OK:
        return theta, LP_OK
    return theta2, LP_OK


def upper_hull(d, e):
    """Indices of the upper concave hull of points ``(d, e)`` sorted by ``d``.

    With ``d`` increasing, a constraint ``t1 * d + t2 >= e`` for all points is
    implied by the hull vertices alone.
    """
    idx = []
    for k in range(len(d)):
        while len(idx) >= 2:
            i, j = idx[-2], idx[-1]
            # drop j when it lies on or below the segment i -> k
            if (e[j] - e[i]) * (d[k] - d[i]) <= (e[k] - e[i]) * (d[j] - d[i]):
                idx.pop()
            else:
                break
        idx.append(k)
    return idx


def scp_batch_1d(lagmax, spacing, rho, ub, tol=1e-10):
    """Lexicographic growth-bound LPs for scalar cells.

    ``lagmax[c, k]`` is the largest output difference across sample pairs
    ``k`` sub-cells apart in cell ``c``; ``spacing[c]`` the sub-cell width.
    Returns ``theta (n_cells, 2)`` and a status vector.
    """
    lagmax = np.asarray(lagmax, dtype=float)
    nc, m = lagmax.shape
    out = np.zeros((nc, 2))
    status = np.zeros(nc, dtype=np.int64)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (nc,))
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (nc,))
    for c in range(nc):
        d = np.arange(m) * spacing[c]
        e = lagmax[c] + rho[c]
        e[0] = rho[c]
        # prefix maxima: a larger lag with smaller demand is dominated
        keep = [0]
        top = e[0]
        for k in range(1, m):
            if e[k] > top:
                keep.append(k)
                top = e[k]
        dk, ek = d[keep], e[keep]
        h = upper_hull(dk, ek)
        A = np.column_stack([dk[h], np.ones(len(h))])
        out[c], status[c] = lexmin_cover(A, ek[h], ub, tol)
        # absorb the solver tolerance so every sampled pair holds exactly
        viol = np.max(lagmax[c, 1:] + rho[c] - out[c, 0] * d[1:] - out[c, 1], initial=0.0)
        viol = max(viol, rho[c] - out[c, 1])
        if viol > 0:
            out[c, 1] += viol
    return out, status


def _box_sum(P, pstr, lo, hi, D):
    s = 0
    for mask in range(1 << D):
        off = 0
        sign = 1
        for k in range(D):
            if mask >> k & 1:
                off += lo[k] * pstr[k]
                sign = -sign
            else:
                off += (hi[k] + 1) * pstr[k]
        s += sign * P[off]
    return s


def cpre_factored(
    cand, counts, sub_axes, nu, nw, tab_off, lo, hi, blk_off, blk, wptr, widx,
    S, P, pstr, out, first_u, valid=None,
):
    """Controlled predecessor on the factored composed abstraction.

    For each candidate state, scan composed inputs in flat order and accept
    the first whose boxes (one per internal input in the state's M-hat set)
    are all unblocked and contained in ``S``.  The internal inputs of
    ``cand[ci]`` are ``widx[wptr[ci]:wptr[ci + 1]]``.  When ``valid`` (flat
    ``len(cand) * n_inputs`` buffer) is given the scan does not stop and
    flags every valid input.
    """
    D = len(counts)
    N = len(nu)
    mult = np.ones(D, dtype=np.int64)
    for k in range(D - 2, -1, -1):
        mult[k] = mult[k + 1] * counts[k + 1]
    n_inputs = int(np.prod(nu))
    use_valid = valid is not None and len(valid) > 0
    box_lo = np.zeros(D, dtype=np.int64)
    box_hi = np.zeros(D, dtype=np.int64)
    for ci in range(len(cand)):
        s = int(cand[ci])
        rem = s
        xm = np.empty(D, dtype=np.int64)
        for k in range(D):
            xm[k] = rem // mult[k]
            rem -= xm[k] * mult[k]
        xi = []
        for i in range(N):
            f = 0
            for k in range(sub_axes[i], sub_axes[i + 1]):
                f = f * counts[k] + xm[k]
            xi.append(f)
        out[ci] = 0
        first_u[ci] = -1
        um = np.zeros(N, dtype=np.int64)
        for u in range(n_inputs):
            if u > 0:
                k = N - 1
                um[k] += 1
                while um[k] == nu[k]:
                    um[k] = 0
                    k -= 1
                    um[k] += 1
            ok = True
            for p in range(wptr[ci], wptr[ci + 1]):
                w = widx[p]
                lof = 0
                for i in range(N):
                    t = (xi[i] * nu[i] + um[i]) * nw + w
                    if blk[blk_off[i] + t]:
                        ok = False
                        break
                    dx = sub_axes[i + 1] - sub_axes[i]
                    base = tab_off[i] + t * dx
                    for k in range(dx):
                        box_lo[sub_axes[i] + k] = lo[base + k]
                        box_hi[sub_axes[i] + k] = hi[base + k]
                if not ok:
                    break
                for k in range(D):
                    lof += box_lo[k] * mult[k]
                if not S[lof]:
                    ok = False
                    break
                vol = 1
                for k in range(D):
                    vol *= box_hi[k] - box_lo[k] + 1
                if _box_sum(P, pstr, box_lo, box_hi, D) != vol:
                    ok = False
                    break
            if ok:
                if first_u[ci] < 0:
                    first_u[ci] = u
                out[ci] = 1
                if not use_valid:
                    break
                valid[ci * n_inputs + u] = 1
