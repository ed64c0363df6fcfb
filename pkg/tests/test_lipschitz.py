import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compabs.geometry import Box
from compabs.lipschitz import (
    estimate_lipschitz,
    fit_reverse_weibull,
    interconnection_lipschitz,
    subsystem_lipschitz,
)
from compabs.sysmodel import average_interconnection, min_subsystem

DOM = Box([0.0], [32.0])


def reverse_weibull(rng, loc, scale, shape, n):
    return loc - scale * (-np.log(rng.random(n))) ** (1.0 / shape)


def test_linear_map():
    est = estimate_lipschitz(lambda x: 0.75 * x, DOM, 1e-3, 50, 200, seed=0)
    assert 0.70 <= est.value <= 0.80


def test_constant_map():
    est = estimate_lipschitz(lambda x: np.full_like(x, 3.0), DOM, 1e-3, 50, 200, seed=0)
    assert est.value <= 1e-9


def test_refinement_shrinks_error():
    truth = 0.75
    a = estimate_lipschitz(lambda x: truth * x, DOM, 1e-3, 50, 200, seed=1)
    b = estimate_lipschitz(lambda x: truth * x, DOM, 1e-3, 200, 800, seed=1)
    assert abs(a.value - truth) <= 0.1
    assert abs(b.value - truth) <= 0.05


def test_nonlinear_map_brackets_slope():
    est = estimate_lipschitz(lambda x: np.sin(x), Box([0.0], [6.3]), 1e-3, 50, 200, seed=2)
    assert 0.95 <= est.value <= 1.05


def test_argument_errors():
    with pytest.raises(ValueError):
        estimate_lipschitz(lambda x: x, DOM, 0.0)
    with pytest.raises(ValueError):
        estimate_lipschitz(lambda x: x, DOM, 1e-3, batches=2)
    with pytest.raises(ValueError):
        estimate_lipschitz(lambda x: x, DOM, 1e-3, pairs=0)


def test_weibull_degenerate():
    fit = fit_reverse_weibull([1.0, 1.0, 1.0])
    assert fit.location == 1.0 and fit.degenerate and fit.scale == 0.0


def test_weibull_synthetic_location():
    rng = np.random.default_rng(7)
    s = reverse_weibull(rng, 2.0, 0.1, 3.0, 10_000)
    fit = fit_reverse_weibull(s)
    assert 1.98 <= fit.location <= 2.02
    assert fit.location >= s.max()


def test_weibull_needs_three_samples():
    with pytest.raises(ValueError):
        fit_reverse_weibull([1.0, 2.0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=3, max_size=60), st.floats(0.0, 5.0))
def test_location_support_and_monotone(samples, extra):
    fit = fit_reverse_weibull(samples)
    assert fit.location >= max(samples)
    bigger = fit_reverse_weibull(samples + [max(samples) + extra])
    assert bigger.location >= fit.location - 1e-9 * max(1.0, fit.location)


def test_benchmark_slices():
    s = min_subsystem()
    lx = subsystem_lipschitz(s, [0.0], "x", seed=3).value
    lw = subsystem_lipschitz(s, [0.0], "w", seed=4).value
    assert 0.70 <= lx <= 0.80  # slope of 0.75 (x + u)
    assert 0.95 <= lw <= 1.05  # slope of w + 1


def test_average_map_constant():
    est = interconnection_lipschitz(average_interconnection(8), seed=5)
    # an infinity-norm step of delta moves the mean by at most delta
    assert est.value <= 1.0 + 1e-6
    assert est.value >= 0.9


def test_deterministic():
    a = estimate_lipschitz(lambda x: 0.75 * x, DOM, seed=11)
    b = estimate_lipschitz(lambda x: 0.75 * x, DOM, seed=11)
    assert a == b
