import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compabs.geometry import Box, DomainError, UniformGrid, minkowski_inflate, product_grid

G32 = UniformGrid(Box([0.0], [32.0]), 1.0)


def test_counts_and_points():
    assert G32.size == 33
    assert np.allclose(G32.axis_points(0), np.arange(33.0))
    g8 = product_grid([G32] * 8)
    assert g8.size == 33**8 == 1_406_408_618_241


def test_quantize_examples():
    assert G32.center(G32.quantize([4.6]))[0] == 5.0
    assert G32.center(G32.quantize([4.5]))[0] == 5.0  # tie goes up
    assert G32.quantize([32.0]) == 32
    assert G32.quantize([0.0]) == 0
    assert G32.quantize([32.0 + 1e-13]) == 32
    with pytest.raises(DomainError):
        G32.quantize([32.1])
    with pytest.raises(DomainError):
        G32.quantize([np.nan])


def test_quantize_centers_identity():
    g = UniformGrid(Box([0.0, -1.0], [4.0, 1.0]), [1.0, 0.5])
    idx = np.arange(g.size)
    assert np.array_equal(g.quantize(g.center(idx)), idx)


def test_cells_intersecting_examples():
    idx, out = G32.cells_intersecting(Box([4.2], [4.8]))
    assert idx.tolist() == [4, 5] and not out
    idx, out = G32.cells_intersecting(Box([7.0], [7.0]))
    assert idx.tolist() == [7]
    idx, out = G32.cells_intersecting(Box([33.0], [34.0]))
    assert idx.size == 0 and out
    # shared boundary counts
    idx, _ = G32.cells_intersecting(Box([4.5], [4.5]))
    assert idx.tolist() == [4, 5]


def test_minkowski_examples():
    b = minkowski_inflate([1, 2], [0.5, 0.5])
    assert np.allclose(b.lower, [0.5, 1.5]) and np.allclose(b.upper, [1.5, 2.5])
    b = minkowski_inflate([3.0], 0.0)
    assert np.array_equal(b.lower, b.upper)
    b = minkowski_inflate([5.0], 1.0133)
    assert np.allclose([b.lower[0], b.upper[0]], [3.9867, 6.0133])
    with pytest.raises(ValueError):
        minkowski_inflate([0.0], -0.1)


def test_box_invariants():
    with pytest.raises(ValueError):
        Box([1.0], [0.0])
    with pytest.raises(ValueError):
        Box([], [])


def test_grid_must_cover():
    with pytest.raises(ValueError):
        UniformGrid(Box([0.0], [1.0]), 0.6)
    with pytest.raises(ValueError):
        UniformGrid(Box([0.0], [1.0]), 0.0)


def test_coverage_random_points(rng):
    g = UniformGrid(Box([0.0, 0.0], [32.0, 8.0]), [1.0, 0.5])
    p = g.domain.sample(rng, 10_000)
    k = g.quantize(p)
    c = g.center(k)
    assert np.all(np.abs(p - c) <= g.eta / 2 + 1e-12)


def test_partition_interior_points(rng):
    p = rng.uniform(0, 32, 2000)
    p = p[np.abs((p + 0.5) % 1.0) > 1e-6]
    k = G32.quantize(p[:, None])
    c = G32.center(k)[:, 0]
    own = np.abs(p[:, None] - np.arange(33.0)[None, :]) < 0.5
    assert np.all(own.sum(axis=1) == 1)
    assert np.array_equal(np.argmax(own, axis=1), np.round(c).astype(int))


def brute_intersecting(g, box):
    out = []
    for i in range(g.size):
        cell = g.cell(i)
        if np.all(cell.lower <= box.upper + 1e-12) and np.all(box.lower <= cell.upper + 1e-12):
            out.append(i)
    return out


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 12), min_size=4, max_size=4), st.sampled_from([0.5, 1.0, 2.0]))
def test_cells_intersecting_matches_scan(v, eta):
    g = UniformGrid(Box([0.0, 0.0], [8.0, 4.0]), eta)
    lo = np.minimum(v[:2], v[2:])
    hi = np.maximum(v[:2], v[2:])
    box = Box(lo, hi)
    idx, out = g.cells_intersecting(box)
    ref = brute_intersecting(g, box)
    assert idx.tolist() == ref
    assert out == (len(ref) == 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 32, allow_nan=False))
def test_quantized_cell_contains(x):
    k = G32.quantize([x])
    assert G32.cell(k).contains([x])


def test_flat_multi_roundtrip():
    g = UniformGrid(Box([0.0, 0.0, 0.0], [2.0, 3.0, 1.0]), 1.0)
    idx = np.arange(g.size)
    assert np.array_equal(g.flat(g.multi(idx)), idx)


def test_serialization_roundtrip():
    g = UniformGrid(Box([0.0, -2.0], [32.0, 2.0]), [1.0, 0.5])
    assert UniformGrid.from_dict(g.to_dict()) == g
