import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from o2slane.hungarian import hungarian


def brute(cost):
    """Minimum total and the lexicographically smallest optimal mapping.

    Mappings are compared as index vectors over the smaller side, summed in row order.
    """
    n, m = cost.shape
    best = None
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            t = 0.0
            for i, c in enumerate(cols):
                t += cost[i, c]
            if best is None or t < best[0]:
                best = (t, cols)
        return best[0], {i: c for i, c in enumerate(best[1])}
    for rows in itertools.permutations(range(n), m):
        mapping = sorted((r, j) for j, r in enumerate(rows))
        t = 0.0
        for r, j in mapping:
            t += cost[r, j]
        if best is None or t < best[0]:
            best = (t, dict(mapping))
    return best


def test_spec_cases():
    assert hungarian([[1, 2], [2, 1]]) == ({0: 0, 1: 1}, 2.0)
    assert hungarian([[4, 1], [2, 3]]) == ({0: 1, 1: 0}, 3.0)
    assert hungarian([[7]]) == ({0: 0}, 7.0)


def test_random_against_brute_force():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n, m = rng.integers(1, 7, 2)
        cost = rng.uniform(0, 10, (n, m))
        mapping, total = hungarian(cost)
        bt, bm = brute(cost)
        assert total == bt
        assert mapping == bm


def test_tie_breaking_is_lexicographic():
    rng = np.random.default_rng(5)
    for _ in range(150):
        n, m = rng.integers(1, 6, 2)
        cost = rng.integers(0, 3, (n, m)).astype(float)
        mapping, total = hungarian(cost)
        bt, bm = brute(cost)
        assert total == bt
        assert mapping == bm


def test_all_equal():
    assert hungarian(np.ones((3, 3)))[0] == {0: 0, 1: 1, 2: 2}


def test_tall_matrix():
    mapping, total = hungarian([[5.0], [1.0], [3.0]])
    assert mapping == {1: 0} and total == 1.0


def test_forbidden_entries():
    inf = np.inf
    mapping, total = hungarian([[inf, 1.0], [2.0, inf]])
    assert mapping == {0: 1, 1: 0} and total == 3.0


@pytest.mark.parametrize("bad", [[[np.nan, 1.0]], [[-np.inf, 1.0]], [1.0, 2.0]])
def test_invalid(bad):
    with pytest.raises(ValueError):
        hungarian(bad)


def test_empty():
    assert hungarian(np.zeros((0, 3))) == ({}, 0.0)


@settings(max_examples=60)
@given(seed=st.integers(0, 10**6), shift=st.floats(-100, 100), n=st.integers(1, 6), m=st.integers(1, 6))
def test_constant_shift_keeps_mapping(seed, shift, n, m):
    cost = np.random.default_rng(seed).uniform(0, 10, (n, m))
    assert hungarian(cost + shift)[0] == hungarian(cost)[0]


def test_larger_instance_is_optimal_against_lp_bound():
    rng = np.random.default_rng(0)
    cost = rng.uniform(0, 1, (40, 60))
    mapping, total = hungarian(cost)
    assert len(set(mapping.values())) == 40
    # greedy can only be worse or equal
    used, greedy = set(), 0.0
    for i in range(40):
        j = min((c for c in range(60) if c not in used), key=lambda c: cost[i, c])
        used.add(j)
        greedy += cost[i, j]
    assert total <= greedy + 1e-12
