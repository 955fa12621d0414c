import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cocktail_miner.distance import (cocktail_distance, distance_matrix, similarity,
                                     similarity_matrix, similarity_sums, write_distance_matrix)
from cocktail_miner.tree import lca_cost

from oracles import operation_distances, random_small_tree

cocktails200 = st.lists(st.integers(0, 199), min_size=1, max_size=5, unique=True).map(
    lambda c: tuple(sorted(c)))


def test_figure_distances(toy, fig):
    assert cocktail_distance(toy, fig(3), fig(3)) == 0
    assert cocktail_distance(toy, fig(3), fig(4)) == 1
    assert cocktail_distance(toy, fig(3), fig(5)) == 2
    assert cocktail_distance(toy, fig(3), fig(3, 5)) == 1


def test_figure_similarities(toy, fig):
    assert similarity(toy, fig(3), fig(4)) == pytest.approx(0.5)
    assert similarity(toy, fig(3), fig(5)) == pytest.approx(0.0)
    assert similarity(toy, fig(3), fig(3, 5)) == pytest.approx(2 / 3)
    assert similarity(toy, fig(1, 5), fig(1, 5)) == 1.0


def test_matches_exhaustive_edit_scripts_on_small_tree():
    tree = random_small_tree(10, seed=7)
    states, oracle = operation_distances(tree, 3)
    mat = distance_matrix(tree, states)
    want = np.array([[oracle(a, b) for b in states] for a in states])
    assert np.allclose(mat, want)


@settings(max_examples=200, deadline=None)
@given(cocktails200, cocktails200)
def test_symmetry_identity_and_bound(tree200, a, b):
    d = cocktail_distance(tree200, a, b)
    assert d == cocktail_distance(tree200, b, a)
    assert (d == 0) == (a == b)
    assert d <= (len(a) + len(b)) * tree200.depth_t / 2
    assert 0.0 <= similarity(tree200, a, b) <= 1.0


def test_bound_is_reached_when_everything_is_far(tree200):
    r1, r2 = tree200.roots[:2]
    a = tuple(int(v) for v in tree200.leaves_under(r1)[:2])
    b = tuple(int(v) for v in tree200.leaves_under(r2)[:3])
    assert all(lca_cost(tree200, x, y) >= tree200.depth_t for x in a for y in b)
    assert cocktail_distance(tree200, a, b) == pytest.approx(5 * tree200.depth_t / 2)
    assert similarity(tree200, a, b) == 0.0


def test_triangle_inequality_on_random_triples(tree200):
    rng = np.random.default_rng(0)
    pool = [tuple(sorted(rng.choice(200, size=rng.integers(1, 5), replace=False).tolist()))
            for _ in range(200)]
    d = distance_matrix(tree200, pool)
    idx = rng.integers(0, len(pool), size=(10_000, 3))
    i, j, k = idx.T
    assert np.all(d[i, j] <= d[i, k] + d[k, j] + 1e-9)


def test_matrix_matches_pairwise_calls(tree200):
    rng = np.random.default_rng(1)
    pool = [tuple(sorted(rng.choice(200, size=rng.integers(1, 8), replace=False).tolist()))
            for _ in range(10)]
    mat = distance_matrix(tree200, pool)
    for i, a in enumerate(pool):
        for j, b in enumerate(pool):
            assert mat[i, j] == pytest.approx(cocktail_distance(tree200, a, b))


def test_matrix_edge_cases(tree200):
    assert distance_matrix(tree200, [(3,)]).tolist() == [[0.0]]
    mat = distance_matrix(tree200, [(1, 2), (5,), (1, 2)])
    assert np.array_equal(mat[0], mat[2])
    with pytest.raises(ValueError):
        distance_matrix(tree200, [])


def test_large_cocktails_use_the_solver_fallback(tree200):
    a = tuple(range(0, 16, 2))
    b = tuple(range(1, 20, 2))
    assert distance_matrix(tree200, [a, b])[0, 1] == pytest.approx(cocktail_distance(tree200, a, b))


def test_similarity_sums_count_duplicates(tree200):
    pop = [(1, 2), (5,), (1, 2)]
    sums = similarity_sums(tree200, pop)
    assert np.allclose(sums, similarity_matrix(tree200, pop).sum(axis=1))
    assert sums[0] >= 2


def test_write_matrix(tmp_path, tree200):
    path = tmp_path / "d.csv"
    write_distance_matrix(path, ["x", "y"], distance_matrix(tree200, [(1,), (150,)]))
    lines = path.read_text().splitlines()
    assert lines[0] == "cocktail,x,y"
    assert lines[1].startswith("x,0,")
