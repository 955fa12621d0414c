import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cocktail_miner.tree import (TreeError, build_tree, free_neighbors, lca_cost, load_tree,
                                 make_cocktail, parent_code, synthetic_tree_rows, write_tree)


def walk_is_descendant(tree, u, v):
    while u >= 0:
        if u == v:
            return True
        u = int(tree.parent[u])
    return False


def test_toy_tree_layout(toy, fig):
    assert len(toy) == 7
    assert toy.depth_t == 2
    (one,) = fig(1)
    assert one == 1
    assert (one, int(toy.exit[one])) == (1, 4)
    assert list(toy.roots) == [0]
    assert sorted(int(v) for v in toy.leaf_ids) == list(fig(3, 4, 5, 6))


def test_single_root_tree():
    t = build_tree([("A", "alimentary")])
    assert len(t) == 1 and t.depth_t == 1 and t.is_leaf(0)


def test_children_follow_code_order_whatever_the_row_order():
    rows = [("B", "b"), ("A02", "x"), ("A", "a"), ("A01", "y"), ("A01B", "z"), ("A01A", "w")]
    t = build_tree(rows)
    assert t.codes == ("A", "A01", "A01A", "A01B", "A02", "B")
    assert t.children[0] == (1, 4)
    assert t.depth.tolist() == [1, 2, 3, 3, 2, 1]


def test_duplicate_code_is_named():
    with pytest.raises(TreeError, match="A01"):
        build_tree([("A", ""), ("A01", ""), ("A01", "")])


def test_orphan_is_rejected():
    with pytest.raises(TreeError, match="A01B"):
        build_tree([("A", ""), ("A01B", "")])


def test_bad_code_length():
    with pytest.raises(TreeError):
        parent_code("A0")


def test_write_and_load_round_trip(tmp_path, tree200):
    path = tmp_path / "t.csv"
    write_tree(tree200, path)
    again = load_tree(path)
    assert again.codes == tree200.codes
    assert np.array_equal(again.exit, tree200.exit)


def test_lca_cost_examples(toy, fig):
    (a,), (b,), (c,), (p,) = fig(3), fig(4), fig(5), fig(1)
    assert lca_cost(toy, a, a) == 0
    assert lca_cost(toy, a, b) == 1
    assert lca_cost(toy, a, p) == 1
    assert lca_cost(toy, a, c) == 2


def test_lca_cost_to_level_two_ancestor(tree200):
    leaf = int(tree200.leaf_ids[0])
    assert tree200.depth[leaf] == 5
    anc = tree200.path_to_root(leaf)[-2]
    assert tree200.depth[anc] == 2
    assert lca_cost(tree200, leaf, anc) == 3


def test_lca_cost_across_roots(tree200):
    r1, r2 = tree200.roots[:2]
    assert lca_cost(tree200, r1, r2) == 1
    deep = int(tree200.leaf_ids[-1])
    assert lca_cost(tree200, int(tree200.leaf_ids[0]), deep) == tree200.depth_t


def test_lca_cost_vectorized(tree200):
    a = np.arange(len(tree200))
    b = a[::-1].copy()
    vec = lca_cost(tree200, a, b)
    assert vec.tolist() == [lca_cost(tree200, int(x), int(y)) for x, y in zip(a, b)]


def test_free_neighbors_figure_case(toy, fig):
    (two,) = fig(2)
    assert sorted(free_neighbors(toy, fig(2, 3), two)) == list(fig(0, 5, 6))


def test_free_neighbors_root_with_all_children(toy, fig):
    (root,) = fig(0)
    assert free_neighbors(toy, fig(0, 1, 2), root) == []


def test_free_neighbors_of_lone_leaf(toy, fig):
    (leaf,) = fig(6)
    assert free_neighbors(toy, fig(6), leaf) == list(fig(2))


def test_make_cocktail_sorts_and_dedupes():
    assert make_cocktail([5, 2, 5]) == (2, 5)
    with pytest.raises(ValueError):
        make_cocktail([])


def test_cocktail_code_round_trip(tree200):
    c = make_cocktail([3, 50, 120])
    assert tree200.parse_cocktail(tree200.cocktail_codes(c)) == c


def test_synthetic_tree_shape(tree200):
    assert len(tree200) == 200
    assert tree200.depth_t == 4
    assert all(tree200.depth[v] == 5 for v in tree200.leaf_ids)


trees = st.builds(
    lambda n, seed, roots: build_tree(synthetic_tree_rows(n, seed=seed, n_roots=roots)),
    st.integers(30, 120), st.integers(0, 10_000), st.integers(1, 3),
)


@settings(max_examples=25, deadline=None)
@given(trees, st.data())
def test_structure_invariants(tree, data):
    n = len(tree)
    for v in range(n):
        p = int(tree.parent[v])
        if p >= 0:
            assert tree.depth[v] == tree.depth[p] + 1
            assert p < v and tree.exit[v] <= tree.exit[p]
        else:
            assert tree.depth[v] == 1
        assert tree.is_leaf(v) == (len(tree.children[v]) == 0)
        kids = tree.children[v]
        assert [tree.codes[c] for c in kids] == sorted(tree.codes[c] for c in kids)
        for a, b in zip(kids, kids[1:]):
            assert tree.exit[a] == b  # sibling intervals are disjoint and adjacent
    u = data.draw(st.integers(0, n - 1))
    v = data.draw(st.integers(0, n - 1))
    assert tree.is_descendant(u, v) == walk_is_descendant(tree, u, v)


@settings(max_examples=25, deadline=None)
@given(trees, st.data())
def test_lca_cost_properties(tree, data):
    n = len(tree)
    a = data.draw(st.integers(0, n - 1))
    b = data.draw(st.integers(0, n - 1))
    c = data.draw(st.integers(0, n - 1))
    ab = lca_cost(tree, a, b)
    assert ab == lca_cost(tree, b, a)
    assert (ab == 0) == (a == b)
    assert 0 <= ab <= tree.depth_t
    assert ab <= lca_cost(tree, a, c) + lca_cost(tree, c, b)


@settings(max_examples=25, deadline=None)
@given(trees, st.data())
def test_free_neighbors_excludes_members(tree, data):
    members = data.draw(st.lists(st.integers(0, len(tree) - 1), min_size=1, max_size=5, unique=True))
    at = data.draw(st.sampled_from(members))
    free = free_neighbors(tree, members, at)
    assert at not in free
    assert not set(free) & set(members)


@pytest.mark.skipif(not os.environ.get("COCKTAIL_MINER_ATC"),
                    reason="set COCKTAIL_MINER_ATC to a full ATC export to run")
def test_full_atc_export():
    tree = load_tree(os.environ["COCKTAIL_MINER_ATC"])
    assert len(tree) == 6809
    assert len(tree.roots) == 14
