import numpy as np
import pytest
from hypothesis import given, strategies as st

from genforest.data import CATEGORICAL, CLASS, CONTINUOUS, Column, Dataset, Schema
from genforest.forest import (
    Cell,
    DecisionTree,
    ForestParams,
    Leaf,
    RandomForest,
    SplitRule,
    gini,
    gini_gain,
    iter_nodes,
    learn_forest,
    learn_tree,
    predict_forest,
    predict_tree,
)
from genforest.synthetic import random_discrete


def one_feature(xs, ys):
    s = Schema.build([Column("x", CONTINUOUS)], Column("y", CLASS, ("0", "1")))
    return Dataset(s, np.asarray(xs, dtype=float)[:, None], ys)


def mixed_data(n=300, seed=0):
    rng = np.random.default_rng(seed)
    s = Schema.build([Column("c", CATEGORICAL, ("a", "b", "c")), Column("u", CONTINUOUS),
                      Column("v", CONTINUOUS)], Column("y", CLASS, ("0", "1", "2")))
    X = np.column_stack([rng.integers(0, 3, n), rng.normal(size=n), rng.normal(size=n)])
    y = ((X[:, 0] + (X[:, 1] > 0) + rng.integers(0, 2, n)) % 3).astype(int)
    return Dataset(s, X, y)


def leaf_tree(counts, schema):
    return DecisionTree(Leaf(np.array(counts), np.arange(sum(counts)), Cell.full(schema)), schema, sum(counts))


# ---- impurity


def test_gini_worked_example():
    assert gini(np.array([30, 70])) == pytest.approx(0.42)
    g = gini_gain(np.array([30, 70]), np.array([0, 40]), np.array([30, 30]))
    assert g == pytest.approx(0.12)
    assert 0.4 * gini(np.array([0, 40])) + 0.6 * gini(np.array([30, 30])) == pytest.approx(0.3)


def test_gini_pure_is_zero():
    assert gini(np.array([0, 5, 0])) == 0.0


# ---- learning


def test_one_class_gives_single_leaf():
    t = learn_tree(one_feature([0, 1, 2, 3], [1, 1, 1, 1]), rng=0)
    assert t.root.is_leaf and len(t.leaves) == 1


def test_two_points_split_at_midpoint():
    t = learn_tree(one_feature([0.0, 1.0], [0, 1]), rng=0)
    assert t.root.split.threshold == 0.5
    assert [leaf.counts.tolist() for leaf in t.leaves] == [[1, 0], [0, 1]]


def test_categorical_split_is_proper_subset():
    d = random_discrete(200, 3, cards=[4, 3, 2], seed=1)
    t = learn_tree(d, rng=0)
    for node in t.internals:
        if node.split.left_set is not None:
            k = d.schema.cardinalities[node.split.feature]
            assert 0 < len(node.split.left_set) < k


def test_rejects_missing_training_cells():
    d = one_feature([0.0, 1.0], [0, 1])
    with pytest.raises(ValueError):
        learn_tree(d.replace(missing=[[True], [False]]))


def test_threshold_lies_between_observed_values():
    d = mixed_data()
    t = learn_tree(d, rng=3)
    for node in t.internals:
        if node.split.threshold is not None:
            xs = d.X[node.cell.contains(d.X), node.split.feature]
            assert (xs <= node.split.threshold).any() and (xs > node.split.threshold).any()


def test_children_counts_sum_to_parent():
    t = learn_tree(mixed_data(), rng=0)
    for node in t.internals:
        assert node.left.n_samples + node.right.n_samples == node.n_samples
    assert sum(leaf.n_samples for leaf in t.leaves) == t.root.n_samples


def test_every_split_reduces_impurity():
    d = mixed_data()
    t = learn_tree(d, rng=0)
    for node in t.internals:
        def counts(n):
            return np.bincount(d.y[n.cell.contains(d.X)], minlength=3)
        assert gini_gain(counts(node), counts(node.left), counts(node.right)) > 0


def test_unit_min_samples_gives_pure_or_duplicate_leaves():
    d = mixed_data()
    t = learn_tree(d, ForestParams(min_samples=1), rng=0)
    for leaf in t.leaves:
        if np.count_nonzero(leaf.counts) > 1:
            rows = d.X[leaf.rows]
            assert (rows == rows[0]).all()


def test_leaf_rows_are_inside_cells():
    d = mixed_data()
    t = learn_tree(d, rng=0)
    for leaf in t.leaves:
        assert leaf.cell.contains(d.X[leaf.rows]).all()
        np.testing.assert_array_equal(np.bincount(d.y[leaf.rows], minlength=3), leaf.counts)


def test_cells_partition_space(rng):
    d = mixed_data()
    t = learn_tree(d, rng=0)
    Q = np.column_stack([rng.integers(0, 3, 1000), rng.normal(size=1000) * 2, rng.normal(size=1000) * 2])
    hits = np.column_stack([leaf.cell.contains(Q) for leaf in t.leaves])
    assert (hits.sum(axis=1) == 1).all()
    np.testing.assert_array_equal(np.argmax(hits, axis=1), t.apply(Q))


def test_cell_split_partitions_parent():
    s = Schema.build([Column("c", CATEGORICAL, ("a", "b", "c")), Column("u", CONTINUOUS)],
                     Column("y", CLASS, ("0", "1")))
    cell = Cell.full(s)
    grid = np.array([[c, u] for c in range(3) for u in np.linspace(-2, 2, 9)])
    for rule in (SplitRule(0, left_set=frozenset({0, 2})), SplitRule(1, threshold=0.25)):
        left, right = cell.split(rule)
        np.testing.assert_array_equal(left.contains(grid) ^ right.contains(grid), True)


def test_surrogates_are_capped_and_ranked():
    t = learn_tree(mixed_data(), ForestParams(surrogates=9), rng=0)
    for node in t.internals:
        assert len(node.surrogates) <= 5
        agree = [s.agreement for s in node.surrogates]
        assert agree == sorted(agree, reverse=True)


# ---- forests


def test_forest_deterministic():
    d = mixed_data()
    a = learn_forest(d, ForestParams(n_trees=5), seed=11)
    b = learn_forest(d, ForestParams(n_trees=5), seed=11)
    np.testing.assert_array_equal(predict_forest(a, d.X), predict_forest(b, d.X))
    for ta, tb in zip(a.trees, b.trees):
        assert [n.split for n in ta.internals] == [n.split for n in tb.internals]


def test_single_tree_forest_equals_tree():
    d = mixed_data()
    f = learn_forest(d, ForestParams(n_trees=1), seed=0)
    np.testing.assert_array_equal(predict_forest(f, d.X), predict_tree(f.trees[0], d.X))


def test_tree_rows_reconstruct_bootstrap():
    d = mixed_data()
    f = learn_forest(d, ForestParams(n_trees=3), seed=2)
    for j, tree in enumerate(f.trees):
        rows = f.tree_training_rows(j)
        assert sum(leaf.n_samples for leaf in tree.leaves) == rows.size
        np.testing.assert_array_equal(np.bincount(d.y[rows], minlength=3),
                                      sum(leaf.counts for leaf in tree.leaves))


def test_forest_on_500_rows_is_fast():
    import time
    d = mixed_data(500)
    t0 = time.perf_counter()
    learn_forest(d, ForestParams(n_trees=100), seed=0)
    assert time.perf_counter() - t0 < 120


def test_soft_vote_and_tie_break():
    s = Schema.build([Column("x", CONTINUOUS)], Column("y", CLASS, ("0", "1")))
    f = RandomForest([leaf_tree([1, 0], s), leaf_tree([0, 1], s)], s, ForestParams(), 0, np.array([1, 1]))
    p = predict_forest(f, np.array([0.0]))
    np.testing.assert_array_equal(p, [0.5, 0.5])
    assert np.argmax(p) == 0
    f3 = RandomForest([leaf_tree([1, 0], s), leaf_tree([2, 0], s), leaf_tree([0, 1], s)], s, ForestParams(), 0,
                      np.array([1, 1]))
    np.testing.assert_allclose(predict_forest(f3, np.array([3.0])), [2 / 3, 1 / 3])


def test_single_leaf_probabilities():
    s = Schema.build([Column("x", CONTINUOUS)], Column("y", CLASS, ("0", "1")))
    np.testing.assert_array_equal(predict_tree(leaf_tree([3, 1], s), np.array([9.0])), [0.75, 0.25])


# ---- the three-leaf toy tree


def test_toy_tree_shape(toy):
    tree, _, _ = toy
    assert tree.root.split.feature == 1 and tree.root.split.threshold == 0.5
    assert tree.root.left.split.left_set == frozenset({0})
    assert [leaf.counts.tolist() for leaf in tree.leaves] == [[0, 40], [10, 30], [20, 0]]


def test_toy_tree_predictions(toy):
    tree, _, _ = toy
    np.testing.assert_array_equal(predict_tree(tree, np.array([1, 0.3])), [0.25, 0.75])
    np.testing.assert_array_equal(predict_tree(tree, np.array([0, 0.9])), [1.0, 0.0])


def test_iter_nodes_is_preorder(toy):
    tree, _, _ = toy
    kinds = [n.is_leaf for n in iter_nodes(tree)]
    assert kinds == [False, False, True, True, True]


@given(st.integers(0, 10_000))
def test_random_discrete_trees_partition(seed):
    d = random_discrete(60, 4, n_classes=3, seed=seed)
    t = learn_tree(d, rng=seed)
    assert sum(leaf.n_samples for leaf in t.leaves) == 60
    from genforest.circuit import enumerate_states
    states = enumerate_states([2] * 4)
    hits = np.column_stack([leaf.cell.contains(states) for leaf in t.leaves])
    assert (hits.sum(axis=1) == 1).all()
