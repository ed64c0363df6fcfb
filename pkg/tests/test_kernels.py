import os
import subprocess
import sys

import numpy as np
import pytest

from compabs import kernels
from compabs.relstore import FactoredComposed, prefix_sum

IMPLS = kernels.implementations()
needs_ext = pytest.mark.skipif("cython" not in IMPLS, reason="compiled extension not built")


def test_fallback_selected_by_env():
    env = dict(os.environ, COMPABS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import compabs; print(compabs.KERNEL_BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_ext
def test_extension_is_default():
    assert kernels.BACKEND == "cython"


@needs_ext
def test_covering_lp_parity():
    py, cy = IMPLS["python"], IMPLS["cython"]
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(1, 30))
        A = np.abs(rng.normal(size=(m, n)))
        b = rng.uniform(-1, 3, m)
        c = rng.uniform(0.1, 2, n)
        ub = np.full(n, 1e3)
        tp, sp = py.covering_lp(A, b, c, ub)
        tc, sc = cy.covering_lp(A, b, c, ub)
        assert sp == sc
        assert float(c @ tp) == pytest.approx(float(c @ tc), abs=1e-9)
        lp, _ = py.lexmin_cover(A, b, ub)
        lc, _ = cy.lexmin_cover(A, b, ub)
        assert np.allclose(lp, lc, atol=1e-9)


@needs_ext
def test_infeasible_parity():
    A = np.array([[1.0, 0.0]])
    b = np.array([5.0])
    ub = np.array([1.0, 1.0])
    for impl in IMPLS.values():
        assert impl.covering_lp(A, b, np.ones(2), ub)[1] == kernels.LP_INFEASIBLE


@needs_ext
def test_scp_batch_parity():
    rng = np.random.default_rng(1)
    lag = np.maximum.accumulate(rng.uniform(0, 2, (300, 9)), axis=1) * rng.random((300, 1))
    lag[:, 0] = 0
    sp = rng.uniform(0.01, 0.2, 300)
    rho = rng.uniform(0, 0.5, 300)
    a, sa = IMPLS["python"].scp_batch_1d(lag, sp, rho, 1e6)
    b, sb = IMPLS["cython"].scp_batch_1d(lag, sp, rho, 1e6)
    assert np.array_equal(sa, sb)
    assert np.allclose(a, b, atol=1e-9)


@needs_ext
def test_cpre_factored_parity(toy2):
    _, abs_, ia = toy2
    comp = FactoredComposed(abs_, ia)
    rng = np.random.default_rng(2)
    cand = np.arange(comp.n_states, dtype=np.int64)
    wptr, widx = comp._wcsr(cand)
    for _ in range(10):
        S = np.ascontiguousarray(rng.random(comp.n_states) < 0.7, dtype=np.uint8)
        P = prefix_sum(S, comp.counts)
        res = {}
        for name, impl in IMPLS.items():
            out = np.zeros(len(cand), np.uint8)
            first = np.zeros(len(cand), np.int64)
            valid = np.zeros(len(cand) * comp.n_inputs, np.uint8)
            impl.cpre_factored(cand, comp.counts, comp.sub_axes, comp.nu, comp.nw, comp.tab_off,
                               comp.lo, comp.hi, comp.blk_off, comp.blk, wptr, widx, S, P, comp.pstr,
                               out, first)
            impl.cpre_factored(cand, comp.counts, comp.sub_axes, comp.nu, comp.nw, comp.tab_off,
                               comp.lo, comp.hi, comp.blk_off, comp.blk, wptr, widx, S, P, comp.pstr,
                               np.zeros(len(cand), np.uint8), np.zeros(len(cand), np.int64), valid)
            res[name] = (out, first[out.astype(bool)], valid)
        for a, b in zip(res["python"], res["cython"]):
            assert np.array_equal(a, b)


def test_upper_hull():
    d = np.array([0.0, 1.0, 2.0, 3.0])
    e = np.array([0.0, 2.0, 3.0, 3.5])
    assert kernels.upper_hull(d, e) == [0, 1, 2, 3]
    e2 = np.array([0.0, 0.5, 3.0, 3.5])
    assert kernels.upper_hull(d, e2) == [0, 2, 3]
