import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compabs import kernels
from compabs.growthbound import (
    GrowthBoundParams,
    ScpInfeasibleError,
    ScpMargin,
    compute_margin,
    eval_growth_bound,
    scp_constraints,
    solve_scp,
    solve_scp_batch_1d,
    subgrid_lag_maxima,
)
from compabs.sysmodel import SubsystemDataset, collect_subsystem_cell_data, logistic_subsystem


def dataset(x, xn):
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    xn = np.asarray(xn, dtype=float).reshape(len(xn), -1)
    return SubsystemDataset(x, np.zeros((len(x), 1)), np.zeros((len(x), 1)), xn)


def margin(rho):
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    return ScpMargin(rho, np.ones_like(rho), (0.0, 0.0))


def test_margin_examples():
    m = compute_margin(1.0, 1.0, 1.0, 1.0, 150)
    assert m.eta_hat_x[0] == pytest.approx(1 / 150)
    assert m.rho[0] == pytest.approx(2 / 150 + 1, abs=1e-12)
    assert compute_margin(0.0, 0.0, 1.0, 1.0, 150).rho[0] == 0.0
    big = compute_margin(1.0, 0.5, 1.0, 2.0, 10**8)
    assert big.rho[0] == pytest.approx(1.0, abs=1e-7)
    m2 = compute_margin(1.0, 1.0, [1.0, 0.5], [0.25], 9)
    assert np.allclose(m2.rho, 2 * np.array([1 / 3, 0.5 / 3]) + 0.25)
    with pytest.raises(ValueError):
        compute_margin(-1.0, 0.0, 1.0, 1.0, 1)


def test_identical_samples():
    p = solve_scp(dataset([2.0] * 5, [1.0] * 5), margin(0.3))
    assert p.theta1[0, 0] == 0.0 and p.theta2[0] == pytest.approx(0.3)


def test_two_sample_lp():
    p = solve_scp(dataset([0.0, 1.0], [0.0, 0.75]), margin(0.1))
    assert p.theta1[0, 0] == pytest.approx(0.75, abs=1e-10)
    assert p.theta2[0] == pytest.approx(0.1, abs=1e-10)
    assert p.objective == pytest.approx(0.85, abs=1e-10)


def test_eval_growth_bound():
    p = GrowthBoundParams(np.array([[0.75]]), np.array([0.1]))
    assert eval_growth_bound(p, [0.0])[0] == pytest.approx(0.1)
    assert eval_growth_bound(p, [1.0])[0] == pytest.approx(0.85)
    q = GrowthBoundParams(np.array([[0.75]]), np.array([0.0]))
    assert eval_growth_bound(q, [2.0])[0] == pytest.approx(2 * eval_growth_bound(q, [1.0])[0])
    with pytest.raises(ValueError):
        eval_growth_bound(p, [-1.0])
    with pytest.raises(ValueError):
        GrowthBoundParams(np.array([[-1.0]]), np.array([0.0]))


def test_infeasible_within_bound():
    with pytest.raises(ScpInfeasibleError) as e:
        solve_scp(dataset([0.0, 1.0], [0.0, 5.0]), margin(0.1), theta_max=0.5)
    assert e.value.component == 0


def test_mixed_inputs_rejected():
    d = dataset([0.0, 1.0], [0.0, 1.0])
    d.u[1] = 1.0
    with pytest.raises(ValueError):
        solve_scp(d, margin(0.0))


def check_sampled(p, d, rho):
    dx, dy = scp_constraints(d.x, d.x_next)
    bound = dx @ p.theta1.T + p.theta2
    assert np.all(bound - dy >= rho - 1e-12)


def test_logistic_cell_soundness():
    s = logistic_subsystem()
    d = collect_subsystem_cell_data(s, (16.0, 0.0, 3.0), 1.0, 1.0, 150)
    m = compute_margin(1.6, 0.16, 1.0, 1.0, 150)
    p = solve_scp(d, m)
    check_sampled(p, d, m.rho)
    assert np.all(p.theta2 >= m.rho - 1e-12)


def vertex_min(A, b, c, ub):
    """Brute-force LP optimum over all basic solutions (tiny problems)."""
    m, n = A.shape
    G = np.vstack([A, np.eye(n), -np.eye(n)])
    h = np.concatenate([b, np.zeros(n), -ub])
    best = np.inf
    for rows in itertools.combinations(range(len(G)), n):
        Gs = G[list(rows)]
        if abs(np.linalg.det(Gs)) < 1e-12:
            continue
        t = np.linalg.solve(Gs, h[list(rows)])
        if np.all(G @ t >= h - 1e-9):
            best = min(best, float(c @ t))
    return best


@pytest.mark.parametrize("name", sorted(kernels.implementations()))
def test_lp_matches_vertex_enumeration(name):
    impl = kernels.implementations()[name]
    rng = np.random.default_rng(1)
    for _ in range(40):
        n = int(rng.integers(2, 4))
        m = int(rng.integers(2, 7))
        A = np.abs(rng.normal(size=(m, n)))
        b = rng.uniform(-0.5, 2.0, m)
        c = rng.uniform(0.1, 2.0, n)
        ub = np.full(n, 50.0)
        t, st_ = impl.covering_lp(A, b, c, ub)
        ref = vertex_min(A, b, c, ub)
        assert st_ == kernels.LP_OK
        assert float(c @ t) == pytest.approx(ref, abs=1e-9)
        assert np.all(A @ t >= b - 1e-9) and np.all(t >= -1e-12) and np.all(t <= ub + 1e-12)


def test_batch_matches_single():
    s = logistic_subsystem()
    ds = [collect_subsystem_cell_data(s, (x, 1.0, 20.0), 1.0, 1.0, 40) for x in (1.0, 9.0, 16.0, 25.0)]
    m = compute_margin(1.6, 0.16, 1.0, 1.0, 40)
    xn = np.stack([d.x_next[:, 0] for d in ds])
    spacing = np.full(len(ds), 1.0 / 40)
    t1, t2 = solve_scp_batch_1d(xn, spacing, np.full(len(ds), m.rho[0]))
    for k, d in enumerate(ds):
        p = solve_scp(d, m)
        assert t1[k] == pytest.approx(p.theta1[0, 0], abs=1e-9)
        assert t2[k] == pytest.approx(p.theta2[0], abs=1e-9)


def test_lag_maxima():
    xn = np.array([[0.0, 1.0, 3.0, 2.0]])
    lag = subgrid_lag_maxima(xn)
    assert lag[0].tolist() == [0.0, 2.0, 3.0, 2.0]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=12), st.floats(0, 1))
def test_sampled_constraints_hold(ys, rho):
    x = np.linspace(0, 1, len(ys))
    d = dataset(x, ys)
    p = solve_scp(d, margin(rho))
    check_sampled(p, d, np.array([rho]))
    assert p.theta2[0] >= rho - 1e-12


def test_larger_theta_max_no_smaller_bound():
    d = dataset(np.linspace(0, 1, 10), np.sin(3 * np.linspace(0, 1, 10)))
    a = solve_scp(d, margin(0.05), theta_max=10.0)
    b = solve_scp(d, margin(0.05), theta_max=100.0)
    assert a.objective == pytest.approx(b.objective, abs=1e-9)
