import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchspn.hashing import LOCATION, SIGN, EdgeHashAssignment, EdgeHashes, HashFamily
from sketchspn.sketch import (AGMS, COUNTMIN, DEGREE, SketchError, add, build_agms,
                              build_countmin, build_degree, clamp_degree, frequency_table,
                              locate, scale, sign_product)


def const_assignment(edge, loc, sign_bit):
    """Assignment whose location is always ``loc`` and sign is 2*sign_bit-1."""
    return EdgeHashAssignment(edge, 0, HashFamily(LOCATION, 1, 0, (loc,), 8),
                              HashFamily(SIGN, 1, 0, (sign_bit,)))


def test_locate_examples():
    one = {"a": const_assignment("a", 3, 1)}
    assert locate(one, {"a": 1}, {"a": np.array([17])}, 8)[0] == 3
    two = {"a": const_assignment("a", 5, 1), "c": const_assignment("c", 6, 1)}
    assert locate(two, {"a": 1, "c": 1}, {"a": np.array([1]), "c": np.array([2])}, 8)[0] == 3
    neg = {"a": const_assignment("a", 2, 1)}
    assert locate(neg, {"a": -1}, {"a": np.array([0])}, 8)[0] == 6
    with pytest.raises(SketchError):
        locate(two, {"a": 1}, {"a": np.array([1]), "c": np.array([2])}, 8)


def test_sign_product_examples():
    assert sign_product({}, {}).size == 0
    one = {"a": const_assignment("a", 0, 1)}
    assert sign_product(one, {"a": np.array([4])})[0] == 1
    two = {"a": const_assignment("a", 0, 0), "c": const_assignment("c", 0, 0)}
    assert sign_product(two, {"a": np.array([1]), "c": np.array([1])})[0] == 1
    with pytest.raises(SketchError):
        sign_product(one, {"c": np.array([1])})


def hashes(edges, width, seed=0, copy=0):
    return EdgeHashes(seed, width, 1).for_edges(edges, copy)


def test_single_row_sketches():
    h = {"a": const_assignment("a", 3, 1)}
    s = build_agms({"a": np.array([9])}, h, {"a": 1}, 8)
    assert list(s.counters) == [0, 0, 0, 1, 0, 0, 0, 0]
    cm = build_countmin({"a": np.array([9])}, h, {"a": 1}, 8)
    assert cm.counters.sum() == 1 and cm.counters[3] == 1
    empty = build_agms({"a": np.zeros(0, dtype=np.int64)}, h, {"a": 1}, 8)
    assert not empty.counters.any()


def test_nulls_are_skipped():
    h = hashes(("a",), 16)
    s = build_countmin({"a": np.array([1, -1, 2, -1])}, h, {"a": 1}, 16)
    assert s.total() == 2


def test_agms_against_bruteforce():
    rng = np.random.default_rng(0)
    keys = rng.integers(0, 30, 100)
    h = hashes(("a",), 16, seed=3)
    s = build_agms({"a": keys}, h, {"a": 1}, 16)
    want = np.zeros(16)
    for k in keys:
        want[int(h["a"].location(np.array([k]))[0])] += int(h["a"].sign(np.array([k]))[0])
    assert np.array_equal(s.counters, want)
    assert np.all(s.counters == np.round(s.counters))
    assert np.abs(s.counters).sum() <= len(keys)


def test_countmin_never_underestimates_zipf():
    rng = np.random.default_rng(1)
    keys = rng.zipf(1.1, 1000) % 500
    h = hashes(("a",), 64, seed=4)
    s = build_countmin({"a": keys}, h, {"a": 1}, 64)
    assert s.total() == 1000
    vals, freq = np.unique(keys, return_counts=True)
    est = s.counters[h["a"].location(vals)]
    assert np.all(est >= freq)


def test_degree_examples():
    h = hashes(("a",), 32, seed=5)
    single = build_degree(frequency_table({"a": np.full(7, 4)}), h, {"a": 1}, 32)
    assert single.counters.max() == 7 and np.count_nonzero(single.counters) == 1
    distinct = np.arange(20)
    deg = build_degree(frequency_table({"a": distinct}), h, {"a": 1}, 32)
    cm = build_countmin({"a": distinct}, h, {"a": 1}, 32)
    assert set(np.unique(deg.counters[deg.counters > 0])) == {1.0}
    assert np.array_equal(cm.counters > 0, deg.counters > 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), min_size=1, max_size=200),
       st.integers(0, 1000))
def test_degree_le_countmin_and_bruteforce(rows, seed):
    keys = {"a": np.array([r[0] for r in rows]), "b": np.array([r[1] for r in rows])}
    h = hashes(("a", "b"), 16, seed=seed)
    orient = {"a": 1, "b": -1}
    cm = build_countmin(keys, h, orient, 16)
    freq = frequency_table(keys)
    full = build_degree(freq, h, orient, 16)
    per_a = build_degree(freq, h, orient, 16, degree_edge="a")
    assert np.all(full.counters <= cm.counters)
    assert np.all(per_a.counters <= cm.counters)
    assert np.all(full.counters <= per_a.counters)
    buckets = locate(h, orient, keys, 16)
    want = np.zeros(16)
    groups = {}
    for (a, _), bkt in zip(rows, buckets):
        groups[(a, bkt)] = groups.get((a, bkt), 0) + 1
    for (_, bkt), n in groups.items():
        want[bkt] = max(want[bkt], n)
    assert np.array_equal(per_a.counters, want)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-1, 50), max_size=200), st.integers(0, 10 ** 6))
def test_linearity_of_disjoint_partitions(keys, seed):
    keys = np.array(keys, dtype=np.int64)
    rng = np.random.default_rng(seed)
    part = rng.random(len(keys)) < 0.5
    h = hashes(("e",), 32, seed=seed)
    for build in (build_agms, build_countmin):
        whole = build({"e": keys}, h, {"e": 1}, 32)
        a = build({"e": keys[part]}, h, {"e": 1}, 32)
        b = build({"e": keys[~part]}, h, {"e": 1}, 32)
        assert np.array_equal(add(a, b).counters, whole.counters)
    cm = build_countmin({"e": keys}, h, {"e": 1}, 32)
    assert cm.total() == int((keys >= 0).sum())


def test_degree_union_inequality_random_splits():
    rng = np.random.default_rng(7)
    h = hashes(("e",), 16, seed=1)
    for _ in range(100):
        keys = rng.integers(0, 40, 300)
        part = rng.random(300) < rng.random()
        d = [build_degree(frequency_table({"e": k}), h, {"e": 1}, 16)
             for k in (keys[part], keys[~part], keys)]
        assert np.all(add(d[0], d[1]).counters >= d[2].counters)


def test_add_scale_clamp():
    h = hashes(("e",), 8, seed=2)
    a = build_countmin({"e": np.arange(10)}, h, {"e": 1}, 8)
    b = build_countmin({"e": np.arange(5, 25)}, h, {"e": 1}, 8)
    zero = a.with_counters(np.zeros(8))
    assert np.array_equal(add(a, zero).counters, a.counters)
    assert np.array_equal(scale(a, 1.0).counters, a.counters)
    assert not scale(a, 0.0).counters.any()
    lhs = scale(add(a, b), 0.3).counters
    rhs = add(scale(a, 0.3), scale(b, 0.3)).counters
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=0)
    with pytest.raises(SketchError):
        scale(a, 1.5)
    other = build_countmin({"e": np.arange(3)}, h, {"e": -1}, 8)
    with pytest.raises(SketchError):
        add(a, other)
    agms = build_agms({"e": np.arange(3)}, h, {"e": 1}, 8)
    with pytest.raises(SketchError):
        add(a, agms)

    root = build_degree(frequency_table({"e": np.arange(40) % 7}), h, {"e": 1}, 8)
    below = root.with_counters(root.counters * 0.5)
    assert np.array_equal(clamp_degree(below, root).counters, below.counters)
    above = root.with_counters(root.counters.copy())
    above.counters[int(np.argmax(root.counters))] += 3
    clamped = clamp_degree(above, root)
    assert np.array_equal(clamped.counters, root.counters)
    assert np.array_equal(clamp_degree(clamped, root).counters, clamped.counters)
    with pytest.raises(SketchError):
        clamp_degree(a, a)


def test_sparse_roundtrip():
    h = hashes(("e",), 64, seed=3)
    s = build_agms({"e": np.arange(30)}, h, {"e": -1}, 64, copy=0)
    sp = s.sparse()
    assert np.all(np.diff(sp.index.astype(np.int64)) > 0)
    assert np.array_equal(sp.dense().counters, s.counters)
    assert sp.dense().config == s.config
    assert s.kind == AGMS and sp.kind == AGMS
