import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compabs.geometry import Box, UniformGrid, product_grid
from compabs.interconn import (
    abstract_interconnection,
    check_interconnection_soundness,
    cross_validate_alpha,
    decompose,
    error_radius,
    fit_lasso,
)
from compabs.relstore import TabulatedInterconnection
from compabs.sysmodel import (
    BlackBoxInterconnection,
    InterconnectionDataset,
    average_interconnection,
    collect_interconnection_data,
    max_interconnection,
)


def test_lasso_exact_small():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    W = X @ np.array([0.5, 0.5])
    est = fit_lasso((X, W), 0.0)
    assert np.allclose(est.matrix, [[0.5, 0.5]], atol=1e-6)
    cd = fit_lasso((X, W), 1e-12)
    assert np.allclose(cd.matrix, [[0.5, 0.5]], atol=1e-6)


def test_lasso_large_alpha_zero():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 32, (30, 4))
    est = fit_lasso((X, X.sum(axis=1)), 1e9)
    assert np.all(est.matrix == 0)


def test_lasso_generic_recovery():
    rng = np.random.default_rng(1)
    M = rng.normal(size=(2, 8))
    X = rng.uniform(0, 32, (16, 8))
    est = fit_lasso((X, X @ M.T), 0.0)
    assert np.max(np.abs(est.matrix - M)) < 1e-6


def test_lasso_objective_monotone():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 6))
    W = X @ rng.normal(size=6) + 0.1 * rng.normal(size=40)
    hist = []
    fit_lasso((X, W), 2.0, history=hist)
    assert len(hist) >= 2
    assert np.all(np.diff(hist) <= 1e-9 * max(1.0, abs(hist[0])))


def test_lasso_rank_warning():
    X = np.ones((5, 3))
    with pytest.warns(RuntimeWarning):
        est = fit_lasso((X, np.full(5, 3.0)), 0.0)
    assert np.allclose(est.matrix, [[1.0, 1.0, 1.0]])
    with pytest.raises(ValueError):
        fit_lasso((X, np.ones(5)), -1.0)


def test_cross_validation():
    rng = np.random.default_rng(3)
    X = rng.uniform(-1, 1, (60, 4))
    W = X @ np.array([1.0, 2.0, 0.0, -1.0])
    assert cross_validate_alpha((X, W), [0.5, 0.0, 0.1]) == 0.0
    assert cross_validate_alpha((X, W), [0.7]) == 0.7
    with pytest.raises(ValueError):
        cross_validate_alpha((X[:3], W[:3]), [0.0, 1.0], folds=5)
    with pytest.raises(ValueError):
        cross_validate_alpha((X, W), [])


def test_cross_validation_planted_support():
    rng = np.random.default_rng(4)
    X = rng.uniform(-1, 1, (100, 8))
    m = np.zeros(8)
    m[[1, 5]] = [1.0, -0.7]
    W = X @ m + 0.05 * rng.normal(size=100)
    a = cross_validate_alpha((X, W), [0.0, 0.01, 0.1, 0.3, 1.0, 3.0, 10.0], 5)
    est = fit_lasso((X, W), a)
    # support above the noise level
    assert np.flatnonzero(np.abs(est.matrix[0]) > 0.05).tolist() == [1, 5]


def test_error_radius_examples():
    X = np.array([[0.0, 0.0], [2.0, 2.0]])
    W = np.array([[0.0], [2.0]])
    data = InterconnectionDataset(X, W, 2)
    M = np.array([[0.5, 0.5]])
    assert error_radius([2.0, 2.0], data, M, 1.0) == 0.0
    data2 = InterconnectionDataset(np.array([[0.0]]), np.array([[0.2]]), 1)
    assert error_radius([0.5], data2, np.array([[0.0]]), 1 / 8) == pytest.approx(0.2625)
    near = error_radius(np.array([[0.1], [0.3], [0.9]]), data2, np.array([[0.0]]), 1 / 8)
    assert np.all(np.diff(near) >= 0)


def test_decompose_uniform_average():
    dec = decompose(np.full((1, 8), 1 / 8), 4, "tree")
    assert len(dec.layers) == 2
    first, second = dec.layers
    assert first.matrix.shape == (2, 8)
    assert np.allclose(first.matrix[first.matrix != 0], 0.25)
    assert (first.matrix != 0).sum(axis=1).tolist() == [4, 4]
    assert np.allclose(second.matrix, [[0.5, 0.5]])
    assert np.allclose(dec.reconstruct(), 1 / 8)
    assert dec.max_indegree() <= 4


def test_decompose_identity():
    dec = decompose(np.eye(3), 1)
    assert len(dec.layers) == 1 and not dec.intermediates
    assert np.allclose(dec.layers[0].matrix, np.eye(3))


def test_decompose_chain():
    dec = decompose(np.full((1, 8), 1.0), 2, "chain")
    assert dec.max_indegree() <= 2
    assert np.allclose(dec.reconstruct(), 1.0)
    assert len(dec.intermediates) == 6


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 32), st.sampled_from([2, 3, 4]), st.sampled_from(["tree", "chain"]),
       st.integers(0, 10_000))
def test_decompose_random_sparse(p, n, sigma, mode, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(p, n)) * (rng.random((p, n)) < 0.4)
    dec = decompose(M, sigma, mode)
    assert dec.max_indegree() <= sigma
    assert np.max(np.abs(dec.reconstruct() - M), initial=0.0) < 1e-9
    x = rng.uniform(0, 32, (5, n))
    assert np.allclose(dec.evaluate(x), x @ M.T, atol=1e-9)


def test_decompose_errors():
    with pytest.raises(ValueError):
        decompose(np.ones((1, 3)), 5)
    with pytest.raises(ValueError):
        decompose(np.ones((1, 3)), 2, "star")


def build(ic, eta=1.0, n_i=2000, n_fit=None, sigma=4, mode="tree", L_M=1.0, eta_z=None, seed=0):
    n = ic.state_domain.dim
    data = collect_interconnection_data(ic, n_i, seed, n_fit or 2 * n)
    est = fit_lasso(data, 0.0)
    dec = decompose(est.matrix, sigma, mode)
    sg = product_grid([UniformGrid(Box([ic.state_domain.lower[k]], [ic.state_domain.upper[k]]), eta)
                       for k in range(n)])
    og = UniformGrid(ic.output_domain, eta)
    return abstract_interconnection(dec, sg, og, data, est, L_M, eta_z)


def test_identity_map():
    ic = BlackBoxInterconnection(Box([0.0], [8.0]), Box([0.0], [8.0]), lambda x: x)
    ia = build(ic, n_i=50)
    s = np.arange(ia.state_grid.size)
    assert ia.contains(s, ia.state_grid.multi(s)).all()


def test_max_map_corner():
    ic = max_interconnection(4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ia = build(ic, sigma=2, mode="chain")
    x = np.array([[0.0, 0.0, 0.0, 32.0]])
    s = ia.state_grid.quantize(x)
    assert ia.contains(s, ia.output_grid.quantize_multi(ic.evaluate(x))).all()
    assert check_interconnection_soundness(ic, ia, 2000, seed=1) == 0


def test_average_map_intermediate_grid():
    ic = average_interconnection(8)
    ia = build(ic, n_fit=20, eta_z=2.0)
    assert ia.eta_z == 2.0
    assert ia.wlo is None  # 33^8 states are never enumerated
    assert len(ia.decomposition.intermediates) == 2
    assert check_interconnection_soundness(ic, ia, 2000, seed=2) == 0


def test_corrupted_interconnection_detected():
    ic = average_interconnection(2)
    ia = build(ic, n_fit=4)
    assert check_interconnection_soundness(ic, ia, 2000, seed=3) == 0
    bad = TabulatedInterconnection(ia.state_grid, ia.output_grid, ia.wlo.copy(), ia.wlo.copy() - 1)
    assert check_interconnection_soundness(ic, bad, 2000, seed=3) > 0


def test_surrogate_inside_box():
    ic = average_interconnection(3)
    ia = build(ic, n_fit=6)
    rng = np.random.default_rng(5)
    x = ic.state_domain.sample(rng, 1000)
    mx = np.clip(x @ ia.estimate.matrix.T, 0, 32)
    assert ia.contains(ia.state_grid.quantize(x), ia.output_grid.quantize_multi(mx)).all()


def test_finer_output_grid_tighter():
    ic = average_interconnection(2)
    coarse = build(ic, eta=1.0, n_fit=4)
    og = UniformGrid(ic.output_domain, 0.5)
    fine = abstract_interconnection(coarse.decomposition, coarse.state_grid, og, coarse.data,
                                    coarse.estimate, 1.0, 1.0)
    assert check_interconnection_soundness(ic, fine, 2000, seed=6) == 0
    width_f = (fine.whi - fine.wlo + 1) * 0.5
    width_c = (coarse.whi - coarse.wlo + 1) * 1.0
    assert width_f.mean() <= width_c.mean()


def test_every_state_nonempty():
    ia = build(average_interconnection(2), n_fit=4)
    assert np.all(ia.whi >= ia.wlo)


def test_save_load(tmp_path):
    from compabs.pipeline import load_interconnection

    ia = build(average_interconnection(2), n_fit=4)
    ia.save(tmp_path / "ic.rel")
    t = load_interconnection(tmp_path / "ic.rel")
    assert np.array_equal(t.wlo, ia.wlo) and np.array_equal(t.whi, ia.whi)
    paths = ia.save_matrices(tmp_path / "ic")
    M = np.loadtxt(paths[0], delimiter=",", ndmin=2)
    assert np.allclose(M, ia.estimate.matrix, atol=0, rtol=0)
