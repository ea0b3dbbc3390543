import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from genforest.baselines import (
    KNNImputer,
    MeanImputer,
    friedman_counts,
    friedman_predict,
    knn_impute,
    mean_impute,
    mixed_distance,
    surrogate_predict,
    surrogate_proba,
)
from genforest.circuit import make_query, marginal_exact
from genforest.convert import leaf_fitter, rf_to_gef
from genforest.data import CATEGORICAL, CLASS, CONTINUOUS, Column, Dataset, Schema, standardize
from genforest.forest import ForestParams, RandomForest, learn_forest, learn_tree, predict_forest
from genforest.synthetic import random_discrete

from oracles import count_sum_labels


def mixed_schema():
    return Schema.build([Column("c", CATEGORICAL, ("a", "b")), Column("u", CONTINUOUS)],
                        Column("y", CLASS, ("0", "1")))


def all_patterns(m):
    return np.array(list(itertools.product([False, True], repeat=m)))


# ---- Friedman


def test_friedman_toy(toy):
    tree, _, _ = toy
    np.testing.assert_array_equal(friedman_counts(tree, np.array([[0.0, 0.0]]), np.array([[False, True]])),
                                  [[20, 40]])
    assert friedman_predict(tree, np.array([[0.0, 0.0]]), np.array([[False, True]]))[0] == 1
    np.testing.assert_array_equal(friedman_counts(tree, np.array([[0.0, 0.3]]), np.array([[True, False]])),
                                  [[10, 70]])


def test_friedman_complete_is_count_vote(toy):
    tree, d, _ = toy
    counts = friedman_counts(tree, d.X)
    np.testing.assert_array_equal(counts, [tree.leaves[i].counts for i in tree.apply(d.X)])


def test_friedman_nan_means_missing(toy):
    tree, _, _ = toy
    np.testing.assert_array_equal(friedman_counts(tree, np.array([[np.nan, np.nan]])), [[30, 70]])


@pytest.mark.parametrize("seed", [0, 1])
def test_friedman_is_constant_density_forest(seed):
    d = random_discrete(60, 4, seed=seed)
    f = learn_forest(d, ForestParams(n_trees=3), seed=seed)
    gef = rf_to_gef(f, d, leaf_fitter("constant"), leaf="constant")
    pats = all_patterns(4)
    x = np.tile(d.X[seed], (len(pats), 1))
    np.testing.assert_array_equal(friedman_predict(f, x, pats), count_sum_labels(gef, d.n, x, pats))


# ---- surrogates


def test_surrogate_complete_equals_forest():
    d = random_discrete(150, 4, seed=3)
    f = learn_forest(d, ForestParams(n_trees=5, surrogates=5), seed=0)
    np.testing.assert_array_equal(surrogate_proba(f, d.X), predict_forest(f, d.X))


def test_duplicated_feature_surrogate():
    rng = np.random.default_rng(0)
    s = Schema.build([Column("a", CONTINUOUS), Column("b", CONTINUOUS)], Column("y", CLASS, ("0", "1")))
    a = rng.normal(size=200)
    d = Dataset(s, np.column_stack([a, a]), (a > 0.1).astype(int))
    tree = learn_tree(d, ForestParams(surrogates=5, max_features="all"), rng=0)
    f = RandomForest([tree], s, ForestParams(n_trees=1, bootstrap=False), None, d.class_counts())
    q = rng.normal(size=(50, 2))
    q[:, 1] = q[:, 0]
    full = surrogate_predict(f, q, np.zeros_like(q, bool))
    miss = np.zeros_like(q, bool)
    miss[:, tree.root.split.feature] = True
    np.testing.assert_array_equal(surrogate_predict(f, q, miss), full)


def test_all_missing_takes_majority_branch():
    s = Schema.build([Column("a", CONTINUOUS)], Column("y", CLASS, ("0", "1")))
    d = Dataset(s, np.arange(10.0)[:, None], [0] * 7 + [1] * 3)
    tree = learn_tree(d, ForestParams(surrogates=5), rng=0)
    f = RandomForest([tree], s, ForestParams(n_trees=1, bootstrap=False), None, d.class_counts())
    np.testing.assert_array_equal(surrogate_proba(f, np.array([[np.nan]])), [[1.0, 0.0]])


# ---- imputation


def fit_data():
    X = np.array([[0, 1.0], [1, 3.0], [1, 5.0], [0, 7.0]])
    return Dataset(mixed_schema(), X, [0, 1, 1, 0])


def test_mean_impute_identity_when_complete():
    st_ = MeanImputer.fit(fit_data())
    X = np.array([[1, 2.5]])
    np.testing.assert_array_equal(mean_impute(st_, X, np.zeros_like(X, bool)), X)


def test_mean_impute_values():
    st_ = MeanImputer.fit(fit_data())
    out = mean_impute(st_, np.array([[np.nan, np.nan]]))
    np.testing.assert_array_equal(out, [[0, 4.0]])  # mode tie {0:2, 1:2} -> 0


def test_mean_impute_standardised_is_zero():
    tr, _, _ = standardize(fit_data())
    out = MeanImputer.fit(tr).impute(np.array([[0, np.nan]]))
    assert abs(out[0, 1]) < 1e-12


def test_mixed_distance_example():
    assert mixed_distance([0, 1.0], [1, 0.0], [True, False]) == 2.0


def test_knn_no_observed_uses_first_rows():
    st_ = KNNImputer.fit(fit_data(), k=3)
    out = knn_impute(st_, np.array([[np.nan, np.nan]]))
    np.testing.assert_array_equal(out, [[1, 3.0]])  # rows 0..2: cats {0,1,1}, mean(1,3,5)


def test_knn_duplicate_neighbour():
    st_ = KNNImputer.fit(fit_data(), k=1)
    out = knn_impute(st_, np.array([[1, np.nan]]), np.array([[False, True]]))
    assert out[0, 1] == 3.0
    out = knn_impute(st_, np.array([[np.nan, 7.0]]))
    assert out[0, 0] == 0


def test_knn_k_clipped_to_n():
    st_ = KNNImputer.fit(fit_data(), k=50)
    np.testing.assert_array_equal(knn_impute(st_, np.array([[np.nan, np.nan]])), [[0, 4.0]])


def test_knn_distances_match_formula(rng):
    d = fit_data()
    st_ = KNNImputer.fit(d)
    q = np.array([[1, 2.0], [0, 6.5]])
    D = st_.distances(q, np.zeros_like(q, bool))
    for i in range(2):
        for j in range(4):
            assert D[i, j] == mixed_distance(q[i], d.X[j], [True, False])


@given(st.integers(0, 1000))
def test_knn_neighbours_brute_force(seed):
    rng = np.random.default_rng(seed)
    s = mixed_schema()
    X = np.column_stack([rng.integers(0, 2, 30), rng.integers(0, 4, 30)]).astype(float)
    st_ = KNNImputer.fit(Dataset(s, X, rng.integers(0, 2, 30)), k=5)
    q = np.column_stack([rng.integers(0, 2, 6), rng.integers(0, 4, 6)]).astype(float)
    miss = rng.random(q.shape) < 0.3
    nb = st_.neighbours(q, miss)
    for i in range(6):
        obs = ~miss[i]
        dist = [mixed_distance(q[i][obs], X[j][obs], np.array([True, False])[obs]) for j in range(30)]
        want = sorted(range(30), key=lambda j: (dist[j], j))[:5]
        assert nb[i].tolist() == want


def test_imputers_are_pure():
    d = random_discrete(50, 3, seed=0)
    knn, mean = KNNImputer.fit(d), MeanImputer.fit(d)
    q = np.array([[0, np.nan, 1], [np.nan, np.nan, 0]])
    np.testing.assert_array_equal(knn.impute(q), knn.impute(q))
    np.testing.assert_array_equal(mean.impute(q), mean.impute(q))


def test_imputers_need_complete_training():
    d = fit_data().replace(missing=[[True, False], [False] * 2, [False] * 2, [False] * 2])
    with pytest.raises(ValueError):
        MeanImputer.fit(d)
    with pytest.raises(ValueError):
        KNNImputer.fit(d)


def test_rate_zero_baselines_equal_forest():
    d = random_discrete(200, 5, seed=5)
    f = learn_forest(d, ForestParams(n_trees=7, surrogates=5), seed=1)
    want = np.argmax(predict_forest(f, d.X), axis=1)
    none = np.zeros_like(d.X, bool)
    np.testing.assert_array_equal(surrogate_predict(f, d.X, none), want)
    for imp in (MeanImputer.fit(d), KNNImputer.fit(d)):
        np.testing.assert_array_equal(np.argmax(predict_forest(f, imp.impute(d.X, none)), axis=1), want)


def test_exact_scores_are_fractions(toy):
    tree, d, _ = toy
    from genforest.convert import dt_to_gedt
    g = dt_to_gedt(tree, d, leaf_fitter("constant"))
    vals, miss = make_query(np.array([0.0, 0.3]), np.array([True, False]), 1)
    assert marginal_exact(g.circuit, vals, miss) == Fraction(70, 100)
