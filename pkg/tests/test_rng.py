"""Counter-based stream: determinism, splitting, distributional sanity."""

import numpy as np

from ssls.rng import Stream


def test_same_seed_same_output():
    a = Stream(123).uniform(1000)
    b = Stream(123).uniform(1000)
    assert np.array_equal(a, b)


def test_different_seeds_differ():
    assert not np.array_equal(Stream(1).u64(64), Stream(2).u64(64))


def test_children_independent_of_parent_draws():
    s1 = Stream(5)
    child_before = s1.child("x").u64(8)
    s2 = Stream(5)
    s2.u64(1000)  # drawing from the parent must not shift the child
    child_after = s2.child("x").u64(8)
    assert np.array_equal(child_before, child_after)


def test_distinct_labels_distinct_streams():
    root = Stream(9)
    a = root.child("a").u64(16)
    b = root.child("b").u64(16)
    c = root.child(0).u64(16)
    d = root.child(1).u64(16)
    assert not np.array_equal(a, b)
    assert not np.array_equal(c, d)


def test_sequential_draws_continue_the_stream():
    s = Stream(77)
    first = s.uniform(10)
    second = s.uniform(10)
    combined = Stream(77).uniform(20)
    assert np.array_equal(np.concatenate([first, second]), combined)


def test_uniform_range_and_mean():
    u = Stream(3).uniform(200_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005


def test_normal_moments():
    z = Stream(4).normal(200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01
    assert abs(np.mean(z**3)) < 0.03  # symmetry


def test_bernoulli_rate():
    draws = Stream(5).bernoulli(0.3, 100_000)
    assert set(np.unique(draws)) <= {0, 1}
    assert abs(draws.mean() - 0.3) < 0.006


def test_permutation_is_bijection():
    perm = Stream(6).permutation(1000)
    assert np.array_equal(np.sort(perm), np.arange(1000))


def test_integers_in_bound():
    draws = Stream(7).integers(10_000, 13)
    assert draws.min() >= 0 and draws.max() <= 12
    counts = np.bincount(draws, minlength=13)
    assert counts.min() > 0


def test_odd_normal_count():
    assert Stream(8).normal(7).shape == (7,)


def test_weighted_index_degenerate():
    s = Stream(9)
    w = np.array([0.0, 0.0, 1.0])
    assert all(s.weighted_index(w) == 2 for _ in range(20))
