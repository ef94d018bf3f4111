import io
import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from treepark.errors import InvalidExcursion, LengthMismatch, SizeCapExceeded, UnreachableSize
from treepark.model import (
    ArrivalFamily,
    Model,
    OffspringDist,
    binary_offspring,
    deterministic_law,
    geometric_offspring,
    poisson_law,
)
from treepark.treegen import (
    CarAssignment,
    PlaneTree,
    cycle_rotation,
    format_tree,
    from_lukasiewicz,
    lukasiewicz,
    parse_instance,
    parse_tree,
    read_instances,
    sample_arrivals,
    sample_gw,
    sample_gw_conditioned,
    sample_gw_conditioned_batch,
    sample_spine_tree,
    size_reachable,
    write_instance,
)

WORKED = [2, 2, 0, 0, 3, 2, 0, 0, 0, 1, 0]
SKEW = OffspringDist([0.4, 0.3, 0.2, 0.1])  # mean 1, not geometric, so shapes are not uniform


def no_cars(off):
    return Model(off, ArrivalFamily.uniform(poisson_law(0.1)))


def random_tree(rng, n, kmax=3):
    """Uniform-ish random plane tree via the cycle lemma on a random composition."""
    while True:
        deg = rng.integers(0, kmax + 1, size=n)
        if deg.sum() == n - 1:
            return PlaneTree.from_degrees(cycle_rotation(deg))


def excursions(n, kmax):
    for seq in itertools.product(range(kmax + 1), repeat=n):
        s = np.cumsum(np.array(seq) - 1)
        if s[-1] == -1 and (s[:-1] >= 0).all():
            yield seq


# --------------------------------------------------------------------------
# encoding


def test_worked_example_walk():
    w = lukasiewicz(PlaneTree.from_degrees(WORKED))
    assert w[-1] == -1 and (w[:-1] >= 0).all()
    assert w.tolist() == [0, 1, 2, 1, 0, 2, 3, 2, 1, 0, 0, -1]


def test_single_vertex_walk():
    t = PlaneTree.from_degrees([0])
    assert lukasiewicz(t).tolist() == [0, -1]
    assert from_lukasiewicz([0, -1]) == t


def test_parent_array_matches_worked_example():
    t = PlaneTree.from_degrees(WORKED)
    assert t.parent.tolist() == [-1, 0, 1, 1, 0, 4, 5, 5, 4, 4, 9]
    assert t.children(4).tolist() == [5, 8, 9]
    assert t.depths().tolist() == [0, 1, 2, 2, 1, 2, 3, 3, 2, 2, 3]
    assert t.subtree_sizes().tolist() == [11, 3, 1, 1, 7, 3, 1, 1, 1, 2, 1]


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_walk_round_trip(n, seed):
    t = random_tree(np.random.default_rng(seed), n)
    assert from_lukasiewicz(lukasiewicz(t)) == t
    assert parse_tree(format_tree(t)) == t


def test_round_trip_many_sampled_trees(rng):
    m = no_cars(geometric_offspring())
    for _ in range(10_000):
        t = sample_gw_conditioned(m, int(rng.integers(1, 40)), rng)
        assert from_lukasiewicz(lukasiewicz(t)) == t


@pytest.mark.parametrize("bad", [[], [1], [0, 0], [2, 0], [-1, 1, 0]])
def test_invalid_excursions(bad):
    with pytest.raises(InvalidExcursion):
        PlaneTree.from_degrees(bad)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=40))
def test_cycle_lemma_unique_shift(seq):
    deg = np.array(seq)
    if deg.sum() != deg.size - 1:
        with pytest.raises(InvalidExcursion):
            cycle_rotation(deg)
        return
    valid = []
    for r in range(deg.size):
        s = np.cumsum(np.roll(deg, -r) - 1)
        if (s[:-1] >= 0).all():
            valid.append(r)
    assert len(valid) == 1
    assert np.array_equal(cycle_rotation(deg), np.roll(deg, -valid[0]))


# --------------------------------------------------------------------------
# line format


def test_instance_io_round_trip(rng):
    m = no_cars(geometric_offspring())
    buf = io.StringIO()
    pairs = []
    for _ in range(5):
        t = sample_gw_conditioned(m, 20, rng)
        c = sample_arrivals(t, Model(geometric_offspring(), ArrivalFamily.uniform(poisson_law(1.0))), rng)
        pairs.append((t, c))
        write_instance(buf, t, c)
    text = "# header\n\n" + buf.getvalue()
    back = list(read_instances(text.splitlines()))
    assert [t for t, _ in back] == [t for t, _ in pairs]
    assert all(np.array_equal(a.counts, b.counts) for (_, a), (_, b) in zip(back, pairs))


def test_instance_errors():
    with pytest.raises(LengthMismatch):
        parse_instance("1 0", "1 2 3")
    with pytest.raises(LengthMismatch):
        list(read_instances(["1 0"]))
    with pytest.raises(InvalidExcursion):
        parse_tree("1 x")


# --------------------------------------------------------------------------
# unconditioned trees


def test_sample_gw_deterministic_given_seed():
    m = no_cars(binary_offspring())
    a = [sample_gw(m, np.random.default_rng(7), 10**6) for _ in range(3)]
    assert a[0] == a[1] == a[2]


def test_binary_size_law_matches_catalan(rng):
    m = no_cars(binary_offspring())
    reps = 100_000
    sizes = np.empty(reps, dtype=np.int64)
    for i in range(reps):
        try:
            sizes[i] = sample_gw(m, rng, 10**4).n
        except SizeCapExceeded:
            sizes[i] = -1
    # P(|T| = 2k+1) = Catalan(k) 2^-(2k+1)
    for k in range(8):
        p = math.comb(2 * k, k) / (k + 1) * 2.0 ** -(2 * k + 1)
        f = np.mean(sizes == 2 * k + 1)
        assert abs(f - p) < 4 * math.sqrt(p * (1 - p) / reps)
    assert abs(np.mean(sizes == 1) - 0.5) < 3 * math.sqrt(0.25 / reps)
    assert np.all(sizes[sizes > 0] % 2 == 1)


def test_size_tail_exponent(rng):
    m = no_cars(geometric_offspring())
    reps = 200_000
    sizes = np.empty(reps, dtype=np.int64)
    for i in range(reps):
        try:
            sizes[i] = sample_gw(m, rng, 10**5).n
        except SizeCapExceeded:
            sizes[i] = 10**5
    # survival P(|T| >= n) ~ n^{-1/2}, i.e. point probabilities ~ n^{-3/2}
    ns = np.unique(np.logspace(1, 3, 12).astype(int))
    surv = np.array([np.mean(sizes >= n) for n in ns])
    slope = np.polyfit(np.log(ns), np.log(surv), 1)[0]
    assert abs(slope + 0.5) < 0.15


def test_size_cap(rng):
    m = no_cars(geometric_offspring())
    hit = 0
    for _ in range(2000):
        try:
            assert sample_gw(m, rng, 50).n < 50
        except SizeCapExceeded:
            hit += 1
    assert 0 < hit < 2000


# --------------------------------------------------------------------------
# conditioned trees


def test_conditioned_single_vertex(rng):
    m = no_cars(geometric_offspring())
    for _ in range(10):
        assert sample_gw_conditioned(m, 1, rng).degrees.tolist() == [0]


def test_unreachable_size(rng):
    m = no_cars(binary_offspring())
    assert not size_reachable(m, 4)
    assert size_reachable(m, 5)
    with pytest.raises(UnreachableSize):
        sample_gw_conditioned(m, 4, rng)


def test_binary_n5_shapes_equiprobable(rng):
    m = no_cars(binary_offspring())
    counts = Counter(tuple(sample_gw_conditioned(m, 5, rng).degrees.tolist()) for _ in range(100_000))
    assert set(counts) == {(2, 2, 0, 0, 0), (2, 0, 2, 0, 0)}
    assert stats.chisquare(list(counts.values())).pvalue > 0.01


def test_conditioned_law_total_variation(rng):
    n, reps = 6, 40_000
    nu = SKEW.probs
    support = list(excursions(n, 3))
    w = np.array([np.prod([nu[d] for d in s]) for s in support])
    exact = w / w.sum()
    m = no_cars(SKEW)
    idx = {s: i for i, s in enumerate(support)}
    obs = np.zeros(len(support))
    for _ in range(reps):
        obs[idx[tuple(sample_gw_conditioned(m, n, rng).degrees.tolist())]] += 1
    tv = 0.5 * np.abs(obs / reps - exact).sum()
    # expected TV of the empirical law is about sqrt(K / (2 pi reps)); 0.03 is a loose ceiling
    assert tv < 0.03
    assert stats.chisquare(obs, exact * reps).pvalue > 0.001


def test_conditioned_batch_rows_are_trees(rng):
    m = no_cars(SKEW)
    deg = sample_gw_conditioned_batch(m, 30, 200, rng)
    assert deg.shape == (200, 30)
    for row in deg:
        PlaneTree.from_degrees(row)


def test_conditioned_leaf_fraction(rng):
    m = no_cars(geometric_offspring())
    f = np.array([np.mean(sample_gw_conditioned(m, 100, rng).degrees == 0) for _ in range(10_000)])
    se = f.std(ddof=1) / math.sqrt(f.size)
    # geometric conditioning gives a uniform plane tree, whose mean leaf count is exactly n/2
    assert abs(f.mean() - 0.5) < 3 * se


# --------------------------------------------------------------------------
# spine trees


def test_spine_height_zero_is_gw():
    m = no_cars(geometric_offspring())
    s = sample_spine_tree(m, 0, np.random.default_rng(3), 10**6)
    assert s.height == 0 and s.spine.tolist() == [0]


def test_spine_binary_h1(rng):
    m = no_cars(binary_offspring())
    for _ in range(200):
        s = sample_spine_tree(m, 1, rng, 10**6)
        assert s.tree.degrees[s.spine[0]] == 2


def test_spine_structure(rng):
    m = no_cars(geometric_offspring())
    for _ in range(200):
        try:
            s = sample_spine_tree(m, 7, rng, 10**5)
        except SizeCapExceeded:
            continue
        t = s.tree
        assert s.spine[0] == 0
        assert all(t.parent[s.spine[i + 1]] == s.spine[i] for i in range(7))
        assert t.depths()[s.spine[-1]] == 7


def test_spine_degrees_size_biased(rng):
    m = no_cars(geometric_offspring())
    h, reps = 5, 20_000
    degs = []
    for _ in range(reps):
        try:
            s = sample_spine_tree(m, h, rng, 10**6)
        except SizeCapExceeded:
            continue
        degs.extend(s.tree.degrees[s.spine[:h]].tolist())
    degs = np.array(degs)
    for k in range(1, 7):
        p = k * 2.0 ** (-k - 1)
        f = np.mean(degs == k)
        assert abs(f - p) < 3 * math.sqrt(p * (1 - p) / degs.size)


# --------------------------------------------------------------------------
# arrivals


def test_no_cars_assignment(rng, empty_model):
    t = sample_gw_conditioned(empty_model, 51, rng)
    assert sample_arrivals(t, empty_model, rng).total == 0


def test_leaf_only_deterministic(rng):
    m = Model(binary_offspring(), ArrivalFamily.leaf_only(deterministic_law(2)))
    t = sample_gw_conditioned(m, 101, rng)
    c = sample_arrivals(t, m, rng)
    assert np.array_equal(c.counts, 2 * (t.degrees == 0))


def test_poisson_arrival_mean(rng, sub):
    n = 100_000
    t = sample_gw_conditioned(sub, n, rng)
    c = sample_arrivals(t, sub, rng)
    assert isinstance(c, CarAssignment) and len(c) == n
    assert abs(c.total / n - 0.325) < 3 * math.sqrt(0.325 / n)
