import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlffbench.neighbors import (build_pairs, build_pairs_bruteforce, build_pairs_celllist, build_triplets,
                                 neighbor_stats, ordered_scatter_add)
from mlffbench.oracles import random_cluster
from mlffbench.system import make_system


def _naive_pairs(x, cutoff):
    out = set()
    for a in range(len(x)):
        for b in range(len(x)):
            if a != b and np.linalg.norm(x[b] - x[a]) <= cutoff:
                out.add((a, b))
    return out


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 60), st.integers(0, 10_000), st.floats(0.5, 9.0))
def test_cell_list_matches_double_loop(n, seed, cutoff):
    x = np.random.default_rng(seed).uniform(0, 12, (n, 3))
    s = make_system(["C"] * n, x)
    cell = build_pairs_celllist(s, cutoff)
    assert set(zip(cell.i.tolist(), cell.j.tolist())) == _naive_pairs(x, cutoff)
    assert cell.same_pairs(build_pairs_bruteforce(s, cutoff))


def test_pairlist_layout():
    s = random_cluster(80, 2)
    p = build_pairs(s, 4.0)
    assert np.all(np.diff(p.i) >= 0)
    assert np.array_equal(p.offsets[1:] - p.offsets[:-1], np.bincount(p.i, minlength=80))
    assert np.allclose(p.vectors, s.positions[p.j] - s.positions[p.i])
    assert np.allclose(p.distances, np.linalg.norm(p.vectors, axis=1))
    # directed: both orientations present
    assert len(p) % 2 == 0


def test_empty_and_single_atom():
    for n in (0, 1):
        s = make_system(["H"] * n, np.zeros((n, 3)))
        for method in ("cell", "brute"):
            assert len(build_pairs(s, 5.0, method)) == 0
    assert neighbor_stats(build_pairs(make_system([], np.zeros((0, 3))), 5.0)).mean == 0.0


def test_bad_arguments():
    s = random_cluster(5, 0)
    with pytest.raises(ValueError):
        build_pairs(s, 0.0)
    with pytest.raises(ValueError):
        build_pairs(s, 3.0, "octree")
    with pytest.raises(ValueError):
        build_triplets(build_pairs(s, 3.0), 4.0)


def test_triplets_enumerate_unordered_neighbor_pairs():
    s = random_cluster(40, 3)
    p = build_pairs(s, 5.0)
    t = build_triplets(p, 3.5)
    close = p.distances <= 3.5
    m = np.bincount(p.i[close], minlength=40)
    assert len(t) == int((m * (m - 1) // 2).sum())
    assert np.all(t.j != t.k) and np.all(p.i[t.pair_ij] == t.center)
    cos = np.einsum("ij,ij->i", p.vectors[t.pair_ij], p.vectors[t.pair_ik]) / (
        p.distances[t.pair_ij] * p.distances[t.pair_ik])
    assert np.allclose(np.cos(t.theta), cos)


def test_neighbor_stats():
    s = random_cluster(50, 4)
    p = build_pairs(s, 5.0)
    stats = neighbor_stats(p)
    assert stats.mean == pytest.approx(len(p) / 50)
    assert stats.histogram.sum() == 50 and stats.max == p.counts.max()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 200), st.integers(1, 10), st.integers(0, 1000))
def test_ordered_scatter_add(m, size, seed):
    rng = np.random.default_rng(seed)
    target = rng.integers(0, size, m)
    values = rng.normal(size=(m, 3))
    ref = np.zeros((size, 3))
    np.add.at(ref, target, values)
    for det in (False, True):
        assert np.allclose(ordered_scatter_add(target, values, size, det), ref, atol=1e-12)
    p = rng.permutation(m)
    assert np.array_equal(ordered_scatter_add(target, values, size, True),
                          ordered_scatter_add(target[p], values[p], size, True))
