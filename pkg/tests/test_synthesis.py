import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compabs.geometry import Box, UniformGrid, product_grid
from compabs.relstore import ExplicitComposed, compose_network
from compabs.synthesis import (
    RefinementViolation,
    StoredController,
    build_consensus_target,
    check_controller,
    consensus_count,
    consensus_points,
    controlled_predecessor,
    open_loop_rollout,
    reach_and_stay,
    refine_and_rollout,
    sample_domain_states,
    synthesize_reach_stay,
)


class Shim:
    def __init__(self, n_states, n_inputs):
        self.n_states, self.n_inputs = n_states, n_inputs


def explicit(n_states, n_inputs, rows):
    rows = sorted(set(map(tuple, rows)))
    return ExplicitComposed.from_tuples(Shim(n_states, n_inputs), np.array(rows, dtype=np.int64).reshape(-1, 3))


def test_chain_cpre_and_ranks():
    T = explicit(4, 1, [(0, 0, 1), (1, 0, 2), (2, 0, 3), (3, 0, 3)])
    S = np.array([0, 0, 0, 1], dtype=bool)
    assert controlled_predecessor(T, S).tolist() == [False, False, True, True]
    c = synthesize_reach_stay(T, S)
    assert c.W.tolist() == [False, False, False, True]
    assert c.rank.tolist() == [3, 2, 1, 0]
    assert check_controller(c) == 0


def test_two_state_reach_stay():
    T = explicit(2, 2, [(0, 0, 1), (1, 0, 1), (1, 1, 0)])
    c = synthesize_reach_stay(T, np.array([False, True]))
    assert c.rank.tolist() == [1, 0]
    assert c.inputs(1).tolist() == [0]
    assert c.inputs(0).tolist() == [0]


def test_unreachable_and_errors():
    T = explicit(3, 1, [(0, 0, 0), (1, 0, 2), (2, 0, 2)])
    c = synthesize_reach_stay(T, np.array([False, False, True]))
    assert c.rank.tolist() == [-1, 1, 0]
    assert c.inputs(0).size == 0
    with pytest.raises(ValueError):
        synthesize_reach_stay(T, np.zeros(3, dtype=bool))


def naive_fixpoint(n, nu, rows, tgt):
    succ = {}
    for s, u, x in rows:
        succ.setdefault((s, u), set()).add(x)

    def cpre(S):
        return {s for (s, u), xs in succ.items() if xs <= S}

    W = set(np.flatnonzero(tgt).tolist())
    while True:
        nW = W & cpre(W)
        if nW == W:
            break
        W = nW
    R, rank = set(W), {s: 0 for s in W}
    k = 0
    while True:
        k += 1
        new = cpre(R) - R
        if not new:
            break
        for s in new:
            rank[s] = k
        R |= new
    return W, rank


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 9), st.integers(1, 3))
def test_fixpoints_match_naive(seed, n, nu):
    rng = np.random.default_rng(seed)
    rows = [(s, u, x) for s in range(n) for u in range(nu) if rng.random() < 0.8
            for x in range(n) if rng.random() < 0.3]
    # every listed pair needs at least one successor
    pairs = {(s, u) for s, u, _ in rows}
    rows += [(s, u, int(rng.integers(n))) for s in range(n) for u in range(nu)
             if (s, u) not in pairs and rng.random() < 0.5]
    if not rows:
        return
    T = explicit(n, nu, rows)
    tgt = rng.random(n) < 0.5
    if not tgt.any():
        return
    c = synthesize_reach_stay(T, tgt)
    W, rank = naive_fixpoint(n, nu, rows, tgt)
    assert set(np.flatnonzero(c.W).tolist()) == W
    assert {s: int(r) for s, r in enumerate(c.rank) if r >= 0} == rank
    assert check_controller(c, states=np.flatnonzero(c.domain)) == 0
    # the core is closed and inside the target
    assert np.all(tgt[c.W])


def test_consensus_counts():
    g1 = UniformGrid(Box([0.0], [32.0]), 1.0)
    assert consensus_count(g1, 2.5, np.arange(32)) == 33
    g3 = product_grid([g1] * 3)
    assert consensus_count(g3, 40.0, np.arange(32)) == 33**3
    g8 = product_grid([g1] * 8)
    assert consensus_count(g8, 2.5, np.arange(32)) == 9_493_117
    with pytest.raises(ValueError):
        consensus_count(g1, 0.0, [0])


def test_consensus_count_matches_mask():
    g = product_grid([UniformGrid(Box([0.0], [32.0]), 1.0)] * 3)
    t = build_consensus_target(g, 2.5, np.arange(32))
    assert t.mask.sum() == t.count
    pts = g.center_multi(g.multi(np.arange(g.size)))
    assert np.array_equal(consensus_points(pts, 2.5, np.arange(32)), t.mask)
    strict = build_consensus_target(g, 2.5, np.arange(32), strict=True)
    assert strict.mask.sum() == strict.count <= t.count


def test_consensus_points_bruteforce(rng):
    x = rng.uniform(0, 32, (2000, 3))
    c = np.arange(32)
    ref = np.array([any(np.all(np.abs(p - phi) <= 2.5) for phi in c) for p in x])
    assert np.array_equal(consensus_points(x, 2.5, c), ref)


def test_reach_and_stay_flags():
    assert reach_and_stay([False, True, True]) == (True, 1)
    assert reach_and_stay([True, False, True]) == (True, 2)
    assert reach_and_stay([True, True, False]) == (False, -1)
    assert reach_and_stay([True, True]) == (True, 0)


@pytest.fixture(scope="module")
def toy_controller(toy2):
    net, abs_, ia = toy2
    comp = compose_network(abs_, ia, backend="explicit")
    target = build_consensus_target(comp.state_grid, 1.0, np.arange(5))
    return net, comp, target, synthesize_reach_stay(comp, target)


def test_toy_controller_closed_loop(toy_controller):
    net, comp, target, ctrl = toy_controller
    assert ctrl.domain_size > 0 and ctrl.W.any()
    assert check_controller(ctrl, states=np.flatnonzero(ctrl.domain)) == 0
    x0 = sample_domain_states(ctrl, net, 20, seed=1)
    for k, x in enumerate(x0):
        r = refine_and_rollout(ctrl, net, x, 30, seed=k, target=target)
        assert r.satisfied
        assert r.x.shape == (31, 2) and r.u.shape == (30, 2)


def test_rollout_outside_domain(toy_controller):
    import dataclasses

    net, comp, target, ctrl = toy_controller
    rank = ctrl.rank.copy()
    rank[0] = -1
    cut = dataclasses.replace(ctrl, rank=rank, _masks={})
    with pytest.raises(RefinementViolation):
        refine_and_rollout(cut, net, comp.state_grid.center(0), 5, 0, target)


def test_open_loop(toy_controller, tmp_path):
    net, _, target, _ = toy_controller
    r = open_loop_rollout(net, [0.0, 4.0], 0.0, 10, target)
    assert r.x.shape == (11, 2) and np.all(r.u == 0)
    r.to_csv(tmp_path / "r.csv")
    head = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert head == "k,x1,x2,u1,u2,w"


def test_stored_controller_roundtrip(toy_controller, tmp_path):
    net, comp, target, ctrl = toy_controller
    n = ctrl.save(tmp_path / "c.bin")
    assert n == ctrl.domain_size
    st_ = StoredController.load(tmp_path / "c.bin")
    assert st_.domain_size == ctrl.domain_size
    assert st_.comp.state_grid == comp.state_grid
    for s in np.flatnonzero(ctrl.domain):
        assert st_.inputs(s).tolist() == ctrl.inputs(s).tolist()
    for u in range(comp.n_inputs):
        assert np.array_equal(st_.comp.input_values(u), comp.input_values(u))
    x = sample_domain_states(st_, net, 3, seed=2)
    for k, x0 in enumerate(x):
        assert refine_and_rollout(st_, net, x0, 20, k, target).satisfied


def test_backends_same_controller(toy2):
    _, abs_, ia = toy2
    ranks = []
    for b in ("explicit", "factored"):
        comp = compose_network(abs_, ia, backend=b)
        t = build_consensus_target(comp.state_grid, 1.0, np.arange(5))
        ranks.append(synthesize_reach_stay(comp, t).rank)
    assert np.array_equal(ranks[0], ranks[1])
