import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compabs.geometry import Box, DomainError
from compabs.sysmodel import (
    InterconnectionDataset,
    SubsystemDataset,
    average_interconnection,
    benchmark_network,
    collect_interconnection_data,
    collect_subsystem_cell_data,
    glog,
    logistic_subsystem,
    max_interconnection,
    min_subsystem,
    step_logistic_benchmark,
    step_min_benchmark,
    subgrid_count,
)


def glog_ref(x, a=0.0, b=32.0):
    return 32.0 / (1.0 + math.exp(-0.2 * (x - (a + b) / 2)))


def test_min_benchmark_examples():
    assert step_min_benchmark(4, 0, 10) == 3.0
    assert step_min_benchmark(32, 7, 32) == 29.25
    assert step_min_benchmark(0, 0, 0) == 0.0
    with pytest.raises(DomainError):
        step_min_benchmark(33, 0, 0)
    with pytest.raises(DomainError):
        step_min_benchmark(1, 8, 0)


def test_glog_examples():
    assert glog(0, 32, 16) == 16.0
    assert abs(glog(0, 32, 1e6) - 32.0) < 1e-12
    assert glog(0, 32, 0) == pytest.approx(1.2533, abs=1e-4)


def test_logistic_examples():
    for x in (0.0, 7.5, 31.0):
        assert step_logistic_benchmark(x, 0.0, x) == glog(0, 32, x)
    assert step_logistic_benchmark(16, 0, 0) == pytest.approx(glog_ref(17.6), rel=1e-14)
    assert step_logistic_benchmark(0, -2, 32) == pytest.approx(glog_ref(-5.2), rel=1e-14)
    with pytest.raises(DomainError):
        step_logistic_benchmark(0, 3, 0)


def test_determinism(rng):
    s = logistic_subsystem()
    x, u, w = rng.uniform(0, 32, (50, 1)), rng.uniform(-2, 2, (50, 1)), rng.uniform(0, 32, (50, 1))
    assert np.array_equal(s.simulate(x, u, w), s.simulate(x, u, w))


def test_min_bound_and_glog_monotone(rng):
    x = rng.uniform(0, 32, 1000)
    u = rng.uniform(0, 7, 1000)
    w = rng.uniform(0, 32, 1000)
    assert np.all(step_min_benchmark(x, u, w) <= 32.0)
    a, b = rng.uniform(-50, 80, (2, 1000))
    ga, gb = glog(0, 32, a), glog(0, 32, b)
    assert np.all((ga > 0) & (ga < 32))
    assert np.all((a < b) <= (ga <= gb))


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.floats(0, 1))
def test_glog_strictly_increasing(x, dx):
    if dx > 1e-6:
        assert glog(0, 32, x + dx) > glog(0, 32, x)


def test_subgrid_counts():
    assert subgrid_count(150, 1) == 150
    assert subgrid_count(5, 2) == 3
    assert subgrid_count(1, 3) == 1
    assert subgrid_count(9, 2) == 3
    with pytest.raises(ValueError):
        subgrid_count(0, 1)


def test_cell_data_layout():
    s = min_subsystem()
    d = collect_subsystem_cell_data(s, (4.0, 0.0, 10.0), 1.0, 1.0, 150)
    assert len(d) == 150
    assert np.allclose(np.diff(d.x[:, 0]), 1 / 150)
    assert d.x.min() > 3.5 and d.x.max() < 4.5
    assert np.array_equal(d.x_next, s.simulate(d.x, d.u, d.w))
    d1 = collect_subsystem_cell_data(s, (4.0, 0.0, 10.0), 1.0, 1.0, 1)
    assert len(d1) == 1 and d1.x[0, 0] == 4.0


def test_cell_data_two_dims():
    from compabs.sysmodel import BlackBoxSubsystem

    s = BlackBoxSubsystem(Box([0, 0], [4, 4]), Box([0], [1]), Box([0], [1]), lambda x, u, w: 0.5 * x)
    d = collect_subsystem_cell_data(s, ((2.0, 2.0), 0.0, 0.0), 1.0, 1.0, 5)
    assert len(d) == 9
    assert np.all(np.abs(d.x - 2.0) < 0.5)


def test_interconnection_data():
    ic = average_interconnection(8)
    a = collect_interconnection_data(ic, 100, seed=3, n_fit=20)
    b = collect_interconnection_data(ic, 100, seed=3, n_fit=20)
    assert np.array_equal(a.x, b.x) and a.n_fit == 20 and len(a.fit_x) == 20
    assert np.array_equal(a.w, ic.evaluate(a.x))
    d, i = a.nearest(a.x[5])
    assert d[0] == 0 and i[0] == 5
    with pytest.raises(ValueError):
        InterconnectionDataset(a.x, a.w, 0)


def test_dataset_csv_roundtrip(tmp_path):
    s = logistic_subsystem()
    d = collect_subsystem_cell_data(s, (16.0, 1.0, 3.0), 1.0, 1.0, 17)
    d.to_csv(tmp_path / "d.csv")
    e = SubsystemDataset.from_csv(tmp_path / "d.csv")
    for f in ("x", "u", "w", "x_next"):
        assert np.array_equal(getattr(d, f), getattr(e, f))
    ic = collect_interconnection_data(max_interconnection(3), 30, 1, 7)
    ic.to_csv(tmp_path / "i.csv")
    j = InterconnectionDataset.from_csv(tmp_path / "i.csv")
    assert np.array_equal(ic.x, j.x) and np.array_equal(ic.w, j.w) and j.n_fit == 7


def test_network_step():
    net = benchmark_network(1, 3)
    x = np.array([4.0, 10.0, 2.0])
    xn, w = net.step(x, np.zeros(3))
    assert w[0] == 10.0
    assert np.allclose(xn, [3.0, 7.5, 1.5])
