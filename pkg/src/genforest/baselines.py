"""Reference methods for prediction with missing features.

Friedman's both-branches traversal, surrogate splits, and two imputers
(mean/mode and k-nearest neighbours under a mixed-type distance).  Queries
are ``(X, missing)`` pairs; masked entries of ``X`` are never read.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .forest import DecisionTree, Internal, RandomForest

KNN_K = 7


def _as_query(X, missing):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    missing = np.isnan(X) if missing is None else np.atleast_2d(np.asarray(missing, dtype=bool))
    return np.where(missing, 0.0, X), missing


# ---------------------------------------------------------------- Friedman


def friedman_counts(forest: RandomForest | DecisionTree, X, missing=None) -> np.ndarray:
    """Class counts summed over every leaf reachable from the root and over all trees.

    A split on a missing feature descends both children; an observed one
    follows its consistent child.  The reached leaves are exactly those
    whose cell agrees with the observed coordinates.
    """
    X, missing = _as_query(X, missing)
    trees = forest.trees if isinstance(forest, RandomForest) else [forest]
    total = np.zeros((X.shape[0], trees[0].n_classes), dtype=np.int64)
    for tree in trees:
        counts = np.array([leaf.counts for leaf in tree.leaves], dtype=np.int64)
        reached = np.column_stack([leaf.cell.contains(X, missing) for leaf in tree.leaves])
        total += reached.astype(np.int64) @ counts
    return total


def friedman_predict(forest: RandomForest | DecisionTree, X, missing=None) -> np.ndarray:
    """Hard vote on summed leaf counts; ties go to the lowest class index."""
    return np.argmax(friedman_counts(forest, X, missing), axis=1)


# ---------------------------------------------------------------- surrogate splits


def _route_with_surrogates(node: Internal, X: np.ndarray, missing: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Left/right decision for rows ``idx`` at ``node``; primary, then surrogates, then majority."""
    go = np.zeros(idx.size, dtype=bool)
    decided = np.zeros(idx.size, dtype=bool)
    j = node.split.feature
    obs = ~missing[idx, j]
    go[obs] = node.split.goes_left(X[idx[obs], j])
    decided |= obs
    for s in node.surrogates:
        if decided.all():
            break
        sj = s.rule.feature
        use = ~decided & ~missing[idx, sj]
        left = s.rule.goes_left(X[idx[use], sj])
        go[use] = ~left if s.reverse else left
        decided |= use
    go[~decided] = node.majority_left
    return go


def tree_surrogate_leaves(tree: DecisionTree, X, missing=None) -> np.ndarray:
    X, missing = _as_query(X, missing)
    out = np.empty(X.shape[0], dtype=np.int64)
    stack = [(tree.root, np.arange(X.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        if node.is_leaf:
            out[idx] = node.id
            continue
        go = _route_with_surrogates(node, X, missing, idx)
        stack.append((node.left, idx[go]))
        stack.append((node.right, idx[~go]))
    return out


def surrogate_proba(forest: RandomForest, X, missing=None) -> np.ndarray:
    """Soft vote of the leaves reached with surrogate routing."""
    X, missing = _as_query(X, missing)
    total = np.zeros((X.shape[0], forest.schema.n_classes))
    for tree in forest.trees:
        total += tree.leaf_probs()[tree_surrogate_leaves(tree, X, missing)]
    return total / forest.n_trees


def surrogate_predict(forest: RandomForest, X, missing=None) -> np.ndarray:
    return np.argmax(surrogate_proba(forest, X, missing), axis=1)


# ---------------------------------------------------------------- imputation


@dataclass(frozen=True)
class MeanImputer:
    """Training mean for continuous columns, training mode for categorical ones."""

    fill: np.ndarray

    @classmethod
    def fit(cls, train: Dataset) -> "MeanImputer":
        if train.missing.any():
            raise ValueError("imputers are fit on complete training data")
        card = train.schema.cardinalities
        fill = np.empty(train.m)
        for j in range(train.m):
            col = train.X[:, j]
            if card[j] > 0:
                fill[j] = np.argmax(np.bincount(col.astype(np.int64), minlength=card[j]))
            else:
                fill[j] = col.mean()
        return cls(fill)

    def impute(self, X, missing=None) -> np.ndarray:
        X, missing = _as_query(X, missing)
        return np.where(missing, self.fill[None, :], X)


def mean_impute(state: MeanImputer, X, missing=None) -> np.ndarray:
    return state.impute(X, missing)


@dataclass(frozen=True)
class KNNImputer:
    """Nearest training rows under ``gamma * Σ w_i [a_i != b_i] + Σ w_i |a_i - b_i|``.

    The first sum runs over categorical features, the second over
    continuous ones, and both only over the features observed in the query.
    """

    X: np.ndarray
    categorical: np.ndarray
    cardinalities: np.ndarray
    k: int = KNN_K
    gamma: float = 1.0
    weights: np.ndarray | None = None

    @classmethod
    def fit(cls, train: Dataset, k: int = KNN_K, gamma: float = 1.0, weights=None) -> "KNNImputer":
        if train.missing.any():
            raise ValueError("imputers are fit on complete training data")
        if k < 1:
            raise ValueError("k must be at least 1")
        w = np.ones(train.m) if weights is None else np.asarray(weights, dtype=np.float64)
        return cls(np.array(train.X), train.schema.is_categorical.copy(), train.schema.cardinalities.copy(),
                   int(k), float(gamma), w)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def distances(self, X, missing=None) -> np.ndarray:
        X, missing = _as_query(X, missing)
        w = self.weights
        scale = np.where(self.categorical, self.gamma * w, w)
        D = np.zeros((X.shape[0], self.n))
        for j in range(X.shape[1]):
            obs = ~missing[:, j]
            if not obs.any():
                continue
            diff = X[obs, j][:, None] - self.X[None, :, j]
            term = (diff != 0).astype(np.float64) if self.categorical[j] else np.abs(diff)
            D[obs] += scale[j] * term
        return D

    def neighbours(self, X, missing=None, chunk: int = 256) -> np.ndarray:
        """Indices of the k nearest training rows; equal distances keep training-row order."""
        X, missing = _as_query(X, missing)
        k = min(self.k, self.n)
        out = np.empty((X.shape[0], k), dtype=np.int64)
        for start in range(0, X.shape[0], chunk):
            sl = slice(start, start + chunk)
            out[sl] = self._nearest(self.distances(X[sl], missing[sl]), k)
        return out

    def _nearest(self, D: np.ndarray, k: int) -> np.ndarray:
        out = np.empty((D.shape[0], k), dtype=np.int64)
        for i, d in enumerate(D):
            if k < self.n:
                kth = np.partition(d, k - 1)[k - 1]
                below = np.flatnonzero(d < kth)
                tied = np.flatnonzero(d == kth)[: k - below.size]
                cand = np.concatenate([below, tied])
                cand = cand[np.lexsort((cand, d[cand]))]
            else:
                cand = np.lexsort((np.arange(self.n), d))
            out[i] = cand
        return out

    def impute(self, X, missing=None) -> np.ndarray:
        X, missing = _as_query(X, missing)
        out = np.array(X, copy=True)
        todo = np.flatnonzero(missing.any(axis=1))
        if todo.size == 0:
            return out
        nb = self.neighbours(X[todo], missing[todo])
        for r, row in enumerate(todo):
            rows = self.X[nb[r]]
            for j in np.flatnonzero(missing[row]):
                if self.categorical[j]:
                    out[row, j] = np.argmax(np.bincount(rows[:, j].astype(np.int64),
                                                        minlength=int(self.cardinalities[j])))
                else:
                    out[row, j] = rows[:, j].mean()
        return out


def knn_impute(state: KNNImputer, X, missing=None) -> np.ndarray:
    return state.impute(X, missing)


def mixed_distance(a, b, categorical, gamma: float = 1.0, weights=None) -> float:
    """Distance between two complete rows under the imputer's metric."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    categorical = np.asarray(categorical, dtype=bool)
    w = np.ones(a.size) if weights is None else np.asarray(weights, dtype=np.float64)
    cat = gamma * np.sum(w[categorical] * (a[categorical] != b[categorical]))
    num = np.sum(w[~categorical] * np.abs(a[~categorical] - b[~categorical]))
    return float(cat + num)
