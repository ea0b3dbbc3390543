"""Turn trained trees and forests into generative circuits.

Each decision node becomes a sum node whose weights are the fractions of
the tree's own training rows routed to each child; each leaf becomes a
joint density over (X, Y) supported on the leaf cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .circuit import Circuit, CircuitBuilder, LeafNode, SumNode
from .data import Dataset, Schema
from .forest import Cell, DecisionTree, RandomForest, iter_nodes
from .leaves import (
    LeafDensity,
    fit_class_factorized,
    fit_constant,
    fit_learnspn_lite,
    fit_uniform,
)

MODES = ("gef", "gefplus")

LeafFitter = Callable[[np.ndarray, np.ndarray, Cell, Schema], LeafDensity]


class ConversionError(ValueError):
    pass


@dataclass(eq=False)
class GeDT:
    circuit: Circuit
    class_counts: np.ndarray  # training class counts routed to the root
    tree: DecisionTree | None = None
    leaf_nodes: tuple[int, ...] = ()  # circuit node id of each tree leaf, by leaf id

    @property
    def n_classes(self) -> int:
        return int(self.class_counts.size)

    @property
    def class_prior(self) -> np.ndarray:
        return self.class_counts / self.class_counts.sum()


@dataclass(eq=False)
class GeF:
    gedts: list[GeDT]
    mode: str = "gef"
    class_counts: np.ndarray | None = None  # forest-level training class counts
    leaf: str = "factorized"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.gedts:
            raise ValueError("a generative forest needs at least one tree")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.class_counts is None:
            self.class_counts = self.gedts[0].class_counts
        self.class_counts = np.asarray(self.class_counts, dtype=np.int64)

    @property
    def n_trees(self) -> int:
        return len(self.gedts)

    @property
    def n_classes(self) -> int:
        return int(self.class_counts.size)

    @property
    def class_prior(self) -> np.ndarray:
        return self.class_counts / self.class_counts.sum()

    def with_mode(self, mode: str) -> "GeF":
        """Same trees, other combination rule (no copying of circuits)."""
        return replace(self, mode=mode)


def dt_to_gedt(tree: DecisionTree, train: Dataset, leaf_fitter: LeafFitter = fit_class_factorized) -> GeDT:
    """Convert one tree given the exact data it was trained on.

    Rows are routed top-down; every decision node must receive rows on both
    sides, otherwise the data does not belong to the tree.
    """
    if train.missing.any():
        raise ConversionError("conversion needs complete training rows")
    X, y = train.X, train.y
    K = train.schema.n_classes
    routed: dict[int, np.ndarray] = {id(tree.root): np.arange(train.n)}
    order = []
    for node in iter_nodes(tree):  # pre-order: parents before children
        idx = routed[id(node)]
        order.append(node)
        if node.is_leaf:
            continue
        go = node.split.goes_left(X[idx, node.split.feature])
        left, right = idx[go], idx[~go]
        if left.size == 0 or right.size == 0:
            raise ConversionError(
                f"decision node on feature {node.split.feature} routed no rows to one side; "
                "training data does not match the tree")
        routed[id(node.left)] = left
        routed[id(node.right)] = right
    if routed[id(tree.root)].size == 0:
        raise ConversionError("empty training data")

    b = CircuitBuilder()
    cid: dict[int, int] = {}
    leaf_nodes = [0] * len(tree.leaves)
    for node in reversed(order):  # children before parents
        idx = routed[id(node)]
        if node.is_leaf:
            dens = leaf_fitter(X[idx], y[idx], node.cell, train.schema)
            cid[id(node)] = b.add(LeafNode(dens))
            leaf_nodes[node.id] = cid[id(node)]
        else:
            kids = (cid[id(node.left)], cid[id(node.right)])
            counts = (routed[id(node.left)].size, routed[id(node.right)].size)
            cid[id(node)] = b.add(SumNode.from_counts(kids, counts, node.split))
    circuit = b.build(cid[id(tree.root)], train.schema.n_features + 1, train.schema)
    counts = np.bincount(y, minlength=K).astype(np.int64)
    return GeDT(circuit, counts, tree, tuple(leaf_nodes))


def rf_to_gef(forest: RandomForest, train: Dataset, leaf_fitter: LeafFitter = fit_class_factorized,
              mode: str = "gef", leaf: str = "factorized") -> GeF:
    """Convert every tree on its own bootstrap sample of ``train``."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    gedts = []
    for j, tree in enumerate(forest.trees):
        if tree.n_train != train.n:
            raise ConversionError(f"tree {j} was trained on {tree.n_train} rows, got {train.n}")
        gedts.append(dt_to_gedt(tree, train.take(forest.tree_training_rows(j)), leaf_fitter))
    return GeF(gedts, mode, train.class_counts(), leaf)


# ---------------------------------------------------------------- leaf fitters by name


def uniform_fitter(lo: np.ndarray, hi: np.ndarray) -> LeafFitter:
    """Uniform leaves on cells clipped to the box ``(lo, hi]``."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)

    def fit(X, y, cell, schema):
        counts = np.bincount(np.asarray(y, dtype=np.int64), minlength=schema.n_classes)
        return fit_uniform(cell.clip(lo, hi), counts)

    return fit


def bounding_box(train: Dataset, margin: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Box containing every training row; the open lower side is pushed out by a small margin."""
    X = train.X
    lo, hi = X.min(axis=0), X.max(axis=0)
    width = np.where(hi > lo, hi - lo, 1.0)
    return lo - margin * width, hi


LEAF_TYPES = ("factorized", "uniform", "learnspn", "constant")


def leaf_fitter(name: str, train: Dataset | None = None) -> LeafFitter:
    if name == "factorized":
        return fit_class_factorized
    if name == "learnspn":
        return fit_learnspn_lite
    if name == "constant":
        return fit_constant
    if name == "uniform":
        if train is None:
            raise ValueError("uniform leaves need the training data to bound the cells")
        return uniform_fitter(*bounding_box(train))
    raise ValueError(f"unknown leaf type {name!r}; choose from {LEAF_TYPES}")
