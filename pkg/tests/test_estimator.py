import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import (agms_sketches, bound_sketches, make_graph, nested_loop_join,
                      spurious_phase_zero)
from sketchspn.estimator import (BOUND, FAGMS_MAX, FAGMS_MEDIAN, EstimationError, JoinEdge,
                                 JoinGraph, bound_estimate, combine_estimates, contract,
                                 contract_arrays, contract_bound, dft, idft)
from sketchspn.hashing import EdgeHashes


def naive_dft(x):
    n = len(x)
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


def test_dft_basics():
    assert not dft(np.zeros(16)).any()
    e0 = np.zeros(16)
    e0[0] = 1
    assert np.allclose(dft(e0), np.ones(16))
    with pytest.raises(EstimationError):
        dft(np.zeros(12))


def test_dft_matches_naive_and_roundtrips():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(1024)
    assert np.max(np.abs(dft(x) - naive_dft(x))) < 1e-8
    assert np.max(np.abs(idft(dft(x)) - x)) < 1e-9
    batch = rng.standard_normal((3, 64))
    assert np.allclose(dft(batch), np.stack([naive_dft(r) for r in batch]))
    assert np.allclose(dft(np.ones(1)), [1.0])


TWO_WAY = [("e", "A", "x", "B", "x")]
CHAIN = [("e1", "A", "x", "B", "x"), ("e2", "B", "y", "C", "y")]
TRANSITIVE = [("e1", "A", "x", "B", "x"), ("e2", "B", "x", "C", "x")]
STAR = [("e1", "A", "x", "B", "x"), ("e2", "A", "y", "C", "y"), ("e3", "A", "z", "D", "z")]


def random_tables(rng, vertices, attrs, rows, domain):
    return {v: {a: rng.integers(0, domain, rows) for a in attrs} for v in vertices}


def test_contract_single_match_and_disjoint():
    g = make_graph("AB", TWO_WAY)
    h = EdgeHashes(0, 16, 1)
    t = {"A": {"x": np.array([5])}, "B": {"x": np.array([5])}}
    assert abs(contract(agms_sketches(t, g, h), g) - 1.0) < 1e-9
    # disjoint keys, pick a seed whose buckets do not collide
    t = {"A": {"x": np.array([1, 2])}, "B": {"x": np.array([3, 4])}}
    for seed in range(100):
        h = EdgeHashes(seed, 16, 1)
        if spurious_phase_zero(t, g, h) == 0:
            break
    assert abs(contract(agms_sketches(t, g, h), g)) < 1e-9


def test_two_way_equals_dot_product_with_reversal():
    rng = np.random.default_rng(1)
    g = make_graph("AB", TWO_WAY)
    t = random_tables(rng, "AB", "x", 300, 50)
    h = EdgeHashes(3, 64, 1)
    s = agms_sketches(t, g, h)
    a, b = s["A"].counters, s["B"].counters
    reversed_b = b[(-np.arange(64)) % 64]
    dot = float(a @ reversed_b)
    assert abs(contract(s, g) - dot) <= 1e-9 * max(1.0, abs(dot))


def phase_zero_enumeration(arrays):
    """Sum of counter products over index tuples whose indices sum to 0 mod w."""
    w = len(arrays[0])
    total = 0.0
    grids = np.meshgrid(*(np.arange(w) for _ in arrays[:-1]), indexing="ij")
    rest = (-sum(grids)) % w
    prod = np.ones(grids[0].shape) if grids else np.ones(())
    for a, gidx in zip(arrays[:-1], grids):
        prod = prod * a[gidx]
    total = float((prod * arrays[-1][rest]).sum())
    return total


@pytest.mark.parametrize("edges,verts", [(CHAIN, "ABC"), (TRANSITIVE, "ABC"), (STAR, "ABCD")])
def test_contract_equals_phase_zero_enumeration(edges, verts):
    rng = np.random.default_rng(2)
    g = make_graph(verts, edges)
    for trial in range(10):
        t = random_tables(rng, verts, "xyz", 20, 10)
        h = EdgeHashes(trial, 8, 1)
        s = agms_sketches(t, g, h)
        got = contract(s, g)
        want = phase_zero_enumeration([s[v].counters for v in g.vertices])
        assert abs(got - want) <= 1e-6 * max(1.0, abs(want))


def test_contract_order_invariant():
    rng = np.random.default_rng(3)
    g = make_graph("ABC", CHAIN)
    t = random_tables(rng, "ABC", "xy", 100, 30)
    h = EdgeHashes(5, 128, 1)
    s = agms_sketches(t, g, h)
    g2 = JoinGraph(("C", "A", "B"), g.edges)
    a, b = contract(s, g), contract(s, g2)
    assert abs(a - b) <= 1e-9 * max(1.0, abs(a))


@pytest.mark.parametrize("edges,verts", [(TWO_WAY, "AB"), (CHAIN, "ABC"), (TRANSITIVE, "ABC")])
def test_collision_free_exactness(edges, verts):
    rng = np.random.default_rng(4)
    g = make_graph(verts, edges)
    t = random_tables(rng, verts, "xy", 40, 12)
    truth = nested_loop_join(t, g)
    for seed in range(200):
        h = EdgeHashes(seed, 1 << 12, 1)
        if spurious_phase_zero(t, g, h) == 0:
            break
    else:
        pytest.fail("no phase-collision-free seed found")
    assert round(contract(agms_sketches(t, g, h), g), 6) == truth


def test_unbiased_small():
    rng = np.random.default_rng(5)
    g = make_graph("AB", TWO_WAY)
    t = {"A": {"x": rng.zipf(1.3, 2000) % 200}, "B": {"x": rng.zipf(1.3, 2000) % 200}}
    fa = np.bincount(t["A"]["x"], minlength=200)
    fb = np.bincount(t["B"]["x"], minlength=200)
    truth = float(fa @ fb)
    est = [contract(agms_sketches(t, g, EdgeHashes(s, 64, 1)), g) for s in range(150)]
    se = np.std(est, ddof=1) / np.sqrt(len(est))
    assert abs(np.mean(est) - truth) <= 3 * se


def test_validation_errors():
    g = make_graph("AB", TWO_WAY)
    t = {"A": {"x": np.array([1])}, "B": {"x": np.array([1])}}
    s = agms_sketches(t, g, EdgeHashes(0, 16, 1))
    wide = agms_sketches(t, g, EdgeHashes(0, 32, 1))
    with pytest.raises(EstimationError):
        contract({"A": s["A"], "B": wide["B"]}, g)
    with pytest.raises(EstimationError):
        contract({"A": s["A"]}, g)
    flipped = s["B"].with_counters(s["B"].counters)
    flipped.orientations = (1,)
    with pytest.raises(EstimationError):
        contract({"A": s["A"], "B": flipped}, g)
    with pytest.raises(EstimationError):
        contract_arrays([])
    with pytest.raises(EstimationError):
        JoinGraph(("A", "B"), ())
    with pytest.raises(EstimationError):
        JoinGraph(("A", "B"), (JoinEdge("e", "A", "x", "B", "x"), JoinEdge("e", "A", "y", "B", "y")))
    with pytest.raises(EstimationError):
        JoinGraph(("A",), (JoinEdge("e", "A", "x", "A", "y"),))


def test_bound_single_rows_and_distinct_keys():
    g = make_graph("AB", TWO_WAY)
    t = {"A": {"x": np.array([3])}, "B": {"x": np.array([3])}}
    cm, deg = bound_sketches(t, g, EdgeHashes(0, 16, 1))
    for v in g.vertices:
        assert contract_bound(cm, deg, g, v) >= 1 - 1e-9
    t = {"A": {"x": np.arange(20)}, "B": {"x": np.arange(10, 40)}}
    for seed in range(100):
        h = EdgeHashes(seed, 256, 1)
        if spurious_phase_zero(t, g, h) == 0:
            break
    cm, deg = bound_sketches(t, g, h)
    for v in g.vertices:
        assert round(contract_bound(cm, deg, g, v), 6) == 10


@pytest.mark.parametrize("edges,verts", [(TWO_WAY, "AB"), (CHAIN, "ABC"), (TRANSITIVE, "ABC")])
def test_bound_is_upper_bound(edges, verts):
    rng = np.random.default_rng(6)
    g = make_graph(verts, edges)
    for seed in range(100):
        t = random_tables(rng, verts, "xy", 50 if len(verts) == 2 else 25, 8)
        truth = nested_loop_join(t, g)
        cm, deg = bound_sketches(t, g, EdgeHashes(seed, 32, 1))
        assert bound_estimate(cm, deg, g) >= truth - 1e-6


def test_bound_rejects_cycles_and_bad_choice():
    g = make_graph("ABC", [("e1", "A", "x", "B", "x"), ("e2", "B", "y", "C", "y"),
                           ("e3", "C", "z", "A", "z")])
    t = {v: {a: np.array([1]) for a in "xyz"} for v in "ABC"}
    cm, deg = bound_sketches(t, g, EdgeHashes(0, 8, 1))
    with pytest.raises(EstimationError):
        contract_bound(cm, deg, g, "A")
    g = make_graph("AB", TWO_WAY)
    cm, deg = bound_sketches({"A": {"x": [1]}, "B": {"x": [1]}}, g, EdgeHashes(0, 8, 1))
    with pytest.raises(EstimationError):
        contract_bound(cm, deg, g, "Z")


def test_combine_estimates():
    for variant in (FAGMS_MEDIAN, FAGMS_MAX, BOUND):
        assert combine_estimates([7.0], variant) == 7.0
    assert combine_estimates([2, 10, 4], FAGMS_MEDIAN) == 4
    assert combine_estimates([2, 10, 4], BOUND) == 2
    assert combine_estimates([2, 10, 4], FAGMS_MAX) == 10
    assert combine_estimates([2, 10, 4, 6], FAGMS_MEDIAN) == 5
    assert combine_estimates([-5, 0.2], FAGMS_MEDIAN) == 1.0
    with pytest.raises(EstimationError):
        combine_estimates([], FAGMS_MEDIAN)
    with pytest.raises(EstimationError):
        combine_estimates([1], "mean")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=9))
def test_max_at_least_median(values):
    assert combine_estimates(values, FAGMS_MAX) >= combine_estimates(values, FAGMS_MEDIAN)
    assert combine_estimates(values, BOUND) <= combine_estimates(values, FAGMS_MEDIAN)
