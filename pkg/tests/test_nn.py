import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pidope import Metric, MuHat, lipschitz_bounds
from pidope.closed_form import EmptyOverlapError
from pidope.nn import KDTree, StaleIndexError, build_nn_index, conservative_bounds

from conftest import lipschitz_instance, make_dataset

E = Metric.euclidean()


def test_nearest_in_one_dimension():
    data = make_dataset([0.0, 10.0, 3.0], [True, True, False])
    idx = build_nn_index(data, E)
    assert idx.neighbor.tolist() == [0] and idx.distance.tolist() == [3.0]


@pytest.mark.parametrize("method", ["tree", "brute"])
def test_tie_goes_to_lowest_row(method):
    data = make_dataset([4.0, 0.0, 2.0, 1.0], [True, True, False, False])
    idx = build_nn_index(data, E, method)
    assert idx.neighbor.tolist() == [0, 1]


def test_tie_in_tree_across_leaves():
    pts = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]] * 10)
    tree = KDTree(pts, leaf_size=1)
    assert tree.query(np.zeros(2)) == (0, 1.0)


def test_tree_matches_brute_force():
    rng = np.random.default_rng(7)
    X = rng.random((500, 3))
    overlap = rng.random(500) < 0.5
    data = make_dataset(X, overlap)
    a = build_nn_index(data, E, "tree")
    b = build_nn_index(data, E, "brute")
    np.testing.assert_array_equal(a.neighbor, b.neighbor)
    D = np.linalg.norm(X[a.rows][:, None] - X[data.overlap_rows][None], axis=2)
    np.testing.assert_allclose(a.distance, D.min(axis=1), atol=1e-12)


def test_tree_needs_euclidean():
    data = make_dataset([0.0, 1.0], [True, False])
    with pytest.raises(ValueError):
        build_nn_index(data, Metric.weighted([2.0]), "tree")
    assert build_nn_index(data, Metric.weighted([2.0])).method == "brute"


def test_empty_overlap():
    with pytest.raises(EmptyOverlapError):
        build_nn_index(make_dataset([0.0, 1.0], [False, False]), E)


def test_conservative_examples():
    mu = MuHat([0.0, 10.0, np.nan])
    data = make_dataset([0.0, 5.0, 4.0], [True, True, False])
    b = conservative_bounds(build_nn_index(data, E), data, mu, 1.0)
    assert b.per_point_lower[0] == 9.0
    assert lipschitz_bounds(data, mu, 1.0, E, check=False).per_point_lower[0] == 9.0
    data = make_dataset([0.0, 5.0, 2.0], [True, True, False])
    b = conservative_bounds(build_nn_index(data, E), data, mu, 1.0)
    assert b.per_point_lower[0] == -2.0
    assert lipschitz_bounds(data, mu, 1.0, E, check=False).per_point_lower[0] == 7.0


def test_stale_index():
    data = make_dataset([0.0, 1.0, 2.0], [True, False, False])
    idx = build_nn_index(data, E)
    moved = make_dataset([0.0, 1.5, 2.0], [True, False, False])
    with pytest.raises(StaleIndexError):
        conservative_bounds(idx, moved, MuHat([0.0, np.nan, np.nan]), 1.0)


def test_sweep_reuses_index():
    rng = np.random.default_rng(3)
    data, mu = lipschitz_instance(rng, 40, 2, 1.0, box=(0, 1))
    idx = build_nn_index(data, E)
    for L in (0.5, 1.0, 2.0):
        a = conservative_bounds(idx, data, mu, L, (0, 1))
        b = conservative_bounds(build_nn_index(data, E), data, mu, L, (0, 1))
        assert (a.lower, a.upper) == (b.lower, b.upper)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 40), st.sampled_from([1, 2, 5]), st.booleans())
def test_conservative_contains_exact(seed, n, p, boxed):
    rng = np.random.default_rng(seed)
    box = (-1.0, 1.0) if boxed else None
    data, mu = lipschitz_instance(rng, n, p, 1.0, box=box)
    idx = build_nn_index(data, E)
    for L in (1.0, 3.0):
        c = conservative_bounds(idx, data, mu, L, box)
        e = lipschitz_bounds(data, mu, L, E, box)
        assert c.lower <= e.lower and c.upper >= e.upper
        assert np.all(c.per_point_lower <= e.per_point_lower)


def test_single_overlap_point_is_exact():
    rng = np.random.default_rng(1)
    X = rng.random((20, 2))
    overlap = np.zeros(20, dtype=bool)
    overlap[4] = True
    data = make_dataset(X, overlap)
    mu = MuHat(np.where(overlap, 0.3, np.nan))
    c = conservative_bounds(build_nn_index(data, E), data, mu, 2.0)
    e = lipschitz_bounds(data, mu, 2.0, E)
    assert (c.lower, c.upper) == (e.lower, e.upper)
