# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the covering LP and the factored predecessor scan."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

DEF LP_OK = 0
DEF LP_INFEASIBLE = 1
DEF LP_ITERLIMIT = 2


cdef int _covering(const double[:, ::1] A, const double[::1] b, const double[::1] c, const double[::1] ub,
                   double tol, int max_iter, double[::1] theta) noexcept nogil:
    cdef Py_ssize_t m = A.shape[0], n = A.shape[1]
    cdef Py_ssize_t rows = m + n, cols = 2 * n + m
    cdef Py_ssize_t i, j, r, q, it
    cdef double *T = <double *> malloc(rows * cols * sizeof(double))
    cdef double *rhs = <double *> malloc(rows * sizeof(double))
    cdef double *d = <double *> malloc(cols * sizeof(double))
    cdef Py_ssize_t *basis = <Py_ssize_t *> malloc(rows * sizeof(Py_ssize_t))
    cdef double a, t, ratio, piv, f, dq
    cdef Py_ssize_t best
    cdef int status = LP_ITERLIMIT

    for i in range(rows * cols):
        T[i] = 0.0
    for i in range(m):
        for j in range(n):
            T[i * cols + j] = -A[i, j]
        T[i * cols + n + i] = 1.0
        rhs[i] = -b[i]
    for i in range(n):
        T[(m + i) * cols + i] = 1.0
        T[(m + i) * cols + n + m + i] = 1.0
        rhs[m + i] = ub[i]
    for j in range(cols):
        d[j] = 0.0
    for j in range(n):
        d[j] = c[j]
    for i in range(rows):
        basis[i] = n + i

    for it in range(max_iter):
        r = -1
        best = -1
        for i in range(rows):
            if rhs[i] < -tol and (best < 0 or basis[i] < best):
                best = basis[i]
                r = i
        if r < 0:
            status = LP_OK
            break
        q = -1
        ratio = INFINITY
        for j in range(cols):
            a = T[r * cols + j]
            if a < -tol:
                t = d[j] / -a
                if t < ratio - 1e-12:
                    ratio = t
                    q = j
        if q < 0:
            status = LP_INFEASIBLE
            break
        piv = T[r * cols + q]
        for j in range(cols):
            T[r * cols + j] /= piv
        rhs[r] /= piv
        for i in range(rows):
            if i != r:
                f = T[i * cols + q]
                if f != 0.0:
                    for j in range(cols):
                        T[i * cols + j] -= f * T[r * cols + j]
                    rhs[i] -= f * rhs[r]
        dq = d[q]
        if dq != 0.0:
            for j in range(cols):
                d[j] -= dq * T[r * cols + j]
        basis[r] = q

    for j in range(n):
        theta[j] = 0.0
    for i in range(rows):
        if basis[i] < n:
            theta[basis[i]] = rhs[i] if rhs[i] > 0.0 else 0.0
    free(T)
    free(rhs)
    free(d)
    free(basis)
    return status


def covering_lp(A, b, c, ub, double tol=1e-10, int max_iter=10000):
    cdef const double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef double[::1] uv = np.array(np.broadcast_to(ub, (Av.shape[1],)), dtype=np.float64)
    theta = np.zeros(Av.shape[1])
    cdef double[::1] tv = theta
    cdef int st
    with nogil:
        st = _covering(Av, bv, cv, uv, tol, max_iter, tv)
    return theta, st


cdef int _lexmin(const double[:, ::1] A, const double[::1] b, const double[::1] ub, double tol,
                 double[::1] theta, double[:, ::1] A2, double[::1] b2,
                 double[::1] ones, double[::1] e, double[::1] tmp) noexcept nogil:
    cdef Py_ssize_t m = A.shape[0], n = A.shape[1], i, j
    cdef int st
    cdef double v = 0.0, s
    st = _covering(A, b, ones, ub, tol, 10000, theta)
    if st != LP_OK:
        return st
    for j in range(n):
        v += theta[j]
    for i in range(m):
        for j in range(n):
            A2[i, j] = A[i, j]
        b2[i] = b[i]
    for j in range(n):
        A2[m, j] = -1.0
    s = v if v > 0 else -v
    b2[m] = -(v + 1e-12 * (s if s > 1.0 else 1.0))
    st = _covering(A2, b2, e, ub, tol, 10000, tmp)
    if st == LP_OK:
        for j in range(n):
            theta[j] = tmp[j]
    return LP_OK


def lexmin_cover(A, b, ub, double tol=1e-10):
    cdef const double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef Py_ssize_t m = Av.shape[0], n = Av.shape[1]
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[::1] uv = np.array(np.broadcast_to(ub, (n,)), dtype=np.float64)
    theta = np.zeros(n)
    cdef double[::1] tv = theta
    cdef double[:, ::1] A2 = np.zeros((m + 1, n))
    cdef double[::1] b2 = np.zeros(m + 1)
    cdef double[::1] ones = np.ones(n)
    e_arr = np.zeros(n)
    e_arr[n - 1] = 1.0
    cdef double[::1] e = e_arr
    cdef double[::1] tmp = np.zeros(n)
    cdef int st
    with nogil:
        st = _lexmin(Av, bv, uv, tol, tv, A2, b2, ones, e, tmp)
    return theta, st


def scp_batch_1d(lagmax, spacing, rho, ub, double tol=1e-10):
    cdef const double[:, ::1] L = np.ascontiguousarray(lagmax, dtype=np.float64)
    cdef Py_ssize_t nc = L.shape[0], m = L.shape[1]
    cdef double[::1] sp = np.array(np.broadcast_to(spacing, (nc,)), dtype=np.float64)
    cdef double[::1] rh = np.array(np.broadcast_to(rho, (nc,)), dtype=np.float64)
    cdef double[::1] uv = np.array(np.broadcast_to(ub, (2,)), dtype=np.float64)
    out = np.zeros((nc, 2))
    status = np.zeros(nc, dtype=np.int64)
    cdef double[:, ::1] ov = out
    cdef long long[::1] sv = status
    cdef double[::1] dk = np.zeros(m)
    cdef double[::1] ek = np.zeros(m)
    cdef Py_ssize_t[::1] hidx = np.zeros(m, dtype=np.intp)
    cdef double[:, ::1] A = np.zeros((m, 2))
    cdef double[::1] bb = np.zeros(m)
    cdef double[:, ::1] A2 = np.zeros((m + 1, 2))
    cdef double[::1] b2 = np.zeros(m + 1)
    cdef double[::1] ones = np.ones(2)
    cdef double[::1] e = np.array([0.0, 1.0])
    cdef double[::1] tmp = np.zeros(2)
    cdef double[::1] th = np.zeros(2)
    cdef Py_ssize_t c, k, nk, nh, i, j
    cdef double top, v
    with nogil:
        for c in range(nc):
            nk = 1
            dk[0] = 0.0
            ek[0] = rh[c]
            top = rh[c]
            for k in range(1, m):
                v = L[c, k] + rh[c]
                if v > top:
                    dk[nk] = k * sp[c]
                    ek[nk] = v
                    nk += 1
                    top = v
            nh = 0
            for k in range(nk):
                while nh >= 2:
                    i = hidx[nh - 2]
                    j = hidx[nh - 1]
                    if (ek[j] - ek[i]) * (dk[k] - dk[i]) <= (ek[k] - ek[i]) * (dk[j] - dk[i]):
                        nh -= 1
                    else:
                        break
                hidx[nh] = k
                nh += 1
            for i in range(nh):
                A[i, 0] = dk[hidx[i]]
                A[i, 1] = 1.0
                bb[i] = ek[hidx[i]]
            sv[c] = _lexmin(A[:nh], bb[:nh], uv, tol, th, A2[:nh + 1], b2[:nh + 1], ones, e, tmp)
            top = rh[c] - th[1]
            for k in range(1, m):
                v = L[c, k] + rh[c] - th[0] * (k * sp[c]) - th[1]
                if v > top:
                    top = v
            ov[c, 0] = th[0]
            ov[c, 1] = th[1] + top if top > 0 else th[1]
    return out, status


cdef inline long long _box_sum(const long long *P, const long long *pstr, const long long *lo,
                               const long long *hi, int D) noexcept nogil:
    cdef long long s = 0, off
    cdef int mask, k, sign
    for mask in range(1 << D):
        off = 0
        sign = 1
        for k in range(D):
            if (mask >> k) & 1:
                off += lo[k] * pstr[k]
                sign = -sign
            else:
                off += (hi[k] + 1) * pstr[k]
        s += sign * P[off]
    return s


def cpre_factored(
    cand, counts, sub_axes, nu, long long nw, tab_off, lo, hi, blk_off, blk,
    wptr, widx, S, P, pstr, out, first_u, valid=None,
):
    cdef const long long[::1] cv = np.ascontiguousarray(cand, dtype=np.int64)
    cdef const long long[::1] cnt = np.ascontiguousarray(counts, dtype=np.int64)
    cdef const long long[::1] sax = np.ascontiguousarray(sub_axes, dtype=np.int64)
    cdef const long long[::1] nuv = np.ascontiguousarray(nu, dtype=np.int64)
    cdef const long long[::1] toff = np.ascontiguousarray(tab_off, dtype=np.int64)
    cdef const int[::1] lov = lo
    cdef const int[::1] hiv = hi
    cdef const long long[::1] boff = np.ascontiguousarray(blk_off, dtype=np.int64)
    cdef const unsigned char[::1] bk = blk
    cdef const long long[::1] wp = wptr
    cdef const int[::1] wi = widx
    cdef const unsigned char[::1] Sv = S
    cdef const long long[::1] Pv = P
    cdef const long long[::1] ps = np.ascontiguousarray(pstr, dtype=np.int64)
    cdef unsigned char[::1] ov = out
    cdef long long[::1] fu = first_u
    cdef int D = cnt.shape[0]
    cdef int N = nuv.shape[0]
    cdef long long[::1] mult = np.ones(D, dtype=np.int64)
    cdef long long[::1] xm = np.zeros(D, dtype=np.int64)
    cdef long long[::1] xi = np.zeros(N, dtype=np.int64)
    cdef long long[::1] um = np.zeros(N, dtype=np.int64)
    cdef long long[::1] blo = np.zeros(D, dtype=np.int64)
    cdef long long[::1] bhi = np.zeros(D, dtype=np.int64)
    if valid is None:
        valid = np.zeros(0, dtype=np.uint8)
    cdef unsigned char[::1] vv = valid
    cdef bint use_valid = vv.shape[0] > 0
    cdef long long n_inputs = 1, s, rem, u, p, w, t, base, lof, vol, f
    cdef int k, i, dx
    cdef bint ok
    cdef Py_ssize_t ci
    for i in range(N):
        n_inputs *= nuv[i]
    for k in range(D - 2, -1, -1):
        mult[k] = mult[k + 1] * cnt[k + 1]
    with nogil:
        for ci in range(cv.shape[0]):
            s = cv[ci]
            rem = s
            for k in range(D):
                xm[k] = rem // mult[k]
                rem -= xm[k] * mult[k]
            for i in range(N):
                f = 0
                for k in range(sax[i], sax[i + 1]):
                    f = f * cnt[k] + xm[k]
                xi[i] = f
            ov[ci] = 0
            fu[ci] = -1
            for i in range(N):
                um[i] = 0
            for u in range(n_inputs):
                if u > 0:
                    k = N - 1
                    um[k] += 1
                    while um[k] == nuv[k]:
                        um[k] = 0
                        k -= 1
                        um[k] += 1
                ok = True
                for p in range(wp[ci], wp[ci + 1]):
                    w = wi[p]
                    for i in range(N):
                        t = (xi[i] * nuv[i] + um[i]) * nw + w
                        if bk[boff[i] + t]:
                            ok = False
                            break
                        dx = <int> (sax[i + 1] - sax[i])
                        base = toff[i] + t * dx
                        for k in range(dx):
                            blo[sax[i] + k] = lov[base + k]
                            bhi[sax[i] + k] = hiv[base + k]
                    if not ok:
                        break
                    lof = 0
                    for k in range(D):
                        lof += blo[k] * mult[k]
                    if not Sv[lof]:
                        ok = False
                        break
                    vol = 1
                    for k in range(D):
                        vol *= bhi[k] - blo[k] + 1
                    if _box_sum(&Pv[0], &ps[0], &blo[0], &bhi[0], D) != vol:
                        ok = False
                        break
                if ok:
                    if fu[ci] < 0:
                        fu[ci] = u
                    ov[ci] = 1
                    if not use_valid:
                        break
                    vv[ci * n_inputs + u] = 1
