"""CART-style decision trees and random forests with Gini splits.

Trees are binary.  Continuous splits send ``x <= t`` left; categorical splits
send ``x in S`` left for a subset ``S`` of the categories seen at the node.
Every node carries its cell, so the leaves of a tree partition the feature
space explicitly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .data import Dataset, Schema, bootstrap_indices

MAX_EXHAUSTIVE_CATEGORIES = 12
MAX_SURROGATES = 5
GAIN_EPS = 1e-12


@dataclass(frozen=True)
class SplitRule:
    feature: int
    threshold: float | None = None
    left_set: frozenset[int] | None = None

    def __post_init__(self):
        if (self.threshold is None) == (self.left_set is None):
            raise ValueError("a split is either a threshold or a category set")
        if self.left_set is not None:
            object.__setattr__(self, "left_set", frozenset(int(c) for c in self.left_set))

    @property
    def is_categorical(self) -> bool:
        return self.left_set is not None

    def goes_left(self, values: np.ndarray) -> np.ndarray:
        """Vectorised routing of one feature column (observed values only)."""
        values = np.asarray(values, dtype=np.float64)
        if self.threshold is not None:
            return values <= self.threshold
        return np.isin(values, list(self.left_set))

    def to_dict(self) -> dict:
        if self.threshold is not None:
            return {"feature": self.feature, "threshold": self.threshold}
        return {"feature": self.feature, "left_set": sorted(self.left_set)}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitRule":
        if "threshold" in d:
            return cls(int(d["feature"]), threshold=float(d["threshold"]))
        return cls(int(d["feature"]), left_set=frozenset(d["left_set"]))


@dataclass(frozen=True)
class Surrogate:
    rule: SplitRule
    agreement: float
    reverse: bool = False  # rule's left side maps to the primary's right side


class Cell:
    """Axis-aligned box: ``(lo, hi]`` per continuous feature, allowed set per categorical."""

    def __init__(self, lo: np.ndarray, hi: np.ndarray, allowed: Sequence[np.ndarray | None]):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.allowed = tuple(None if a is None else np.asarray(a, dtype=bool) for a in allowed)
        self._cont = np.array([a is None for a in self.allowed], dtype=bool)
        self._cat_idx = np.flatnonzero(~self._cont).tolist()

    @classmethod
    def full(cls, schema: Schema) -> "Cell":
        m = schema.n_features
        allowed = [np.ones(c.cardinality, bool) if k else None
                   for c, k in zip(schema.features, schema.is_categorical)]
        return cls(np.full(m, -np.inf), np.full(m, np.inf), allowed)

    @property
    def m(self) -> int:
        return len(self.allowed)

    def split(self, rule: SplitRule) -> tuple["Cell", "Cell"]:
        j = rule.feature
        if rule.is_categorical:
            mask = np.zeros_like(self.allowed[j])
            mask[list(rule.left_set)] = True
            left_allowed, right_allowed = list(self.allowed), list(self.allowed)
            left_allowed[j] = self.allowed[j] & mask
            right_allowed[j] = self.allowed[j] & ~mask
            return Cell(self.lo, self.hi, left_allowed), Cell(self.lo, self.hi, right_allowed)
        lhi, rlo = self.hi.copy(), self.lo.copy()
        lhi[j] = min(self.hi[j], rule.threshold)
        rlo[j] = max(self.lo[j], rule.threshold)
        return Cell(self.lo, lhi, self.allowed), Cell(rlo, self.hi, self.allowed)

    def contains(self, X: np.ndarray, missing: np.ndarray | None = None) -> np.ndarray:
        """Row-wise membership; a missing coordinate never excludes a row."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        miss = None if missing is None else np.atleast_2d(missing)
        cont = self._cont
        inside = (X[:, cont] > self.lo[cont]) & (X[:, cont] <= self.hi[cont])
        if miss is not None:
            inside |= miss[:, cont]
        ok = inside.all(axis=1)
        for j in self._cat_idx:
            a = self.allowed[j]
            col = X[:, j]
            idx = np.clip(np.nan_to_num(col, nan=0.0), 0, len(a) - 1).astype(np.int64)
            inside = a[idx] & (col >= 0) & (col < len(a))
            if miss is not None:
                inside |= miss[:, j]
            ok &= inside
        return ok

    def clip(self, lo: np.ndarray, hi: np.ndarray) -> "Cell":
        cont = np.array([a is None for a in self.allowed])
        new_lo = np.where(cont, np.maximum(self.lo, lo), self.lo)
        new_hi = np.where(cont, np.minimum(self.hi, hi), self.hi)
        return Cell(new_lo, new_hi, self.allowed)

    def side_lengths(self) -> np.ndarray:
        """Continuous side lengths; NaN for categorical coordinates."""
        out = self.hi - self.lo
        for j, a in enumerate(self.allowed):
            if a is not None:
                out[j] = np.nan
        return out

    def diameter(self) -> float:
        sides = self.side_lengths()
        sides = sides[~np.isnan(sides)]
        return float(sides.max()) if sides.size else 0.0

    def is_singleton(self, j: int) -> bool:
        a = self.allowed[j]
        return a is not None and int(a.sum()) == 1

    def __eq__(self, other):
        if not isinstance(other, Cell) or other.m != self.m:
            return NotImplemented
        if not (np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)):
            return False
        return all((a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))
                   for a, b in zip(self.allowed, other.allowed))

    def __repr__(self):
        parts = []
        for j, a in enumerate(self.allowed):
            if a is None:
                if np.isfinite(self.lo[j]) or np.isfinite(self.hi[j]):
                    parts.append(f"x{j}∈({self.lo[j]:.4g},{self.hi[j]:.4g}]")
            elif not a.all():
                parts.append(f"x{j}∈{set(np.flatnonzero(a).tolist())}")
        return "Cell(" + ", ".join(parts) + ")"

    def to_dict(self) -> dict:
        return {
            "lo": [float(v) for v in self.lo],
            "hi": [float(v) for v in self.hi],
            "allowed": [None if a is None else np.flatnonzero(a).tolist() for a in self.allowed],
            "card": [None if a is None else len(a) for a in self.allowed],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Cell":
        allowed = []
        for idx, k in zip(d["allowed"], d["card"]):
            if idx is None:
                allowed.append(None)
            else:
                a = np.zeros(k, bool)
                a[idx] = True
                allowed.append(a)
        return cls(np.array(d["lo"], dtype=float), np.array(d["hi"], dtype=float), allowed)


@dataclass(eq=False)
class Leaf:
    counts: np.ndarray
    rows: np.ndarray
    cell: Cell
    id: int = -1

    @property
    def n_samples(self) -> int:
        return int(self.counts.sum())

    @property
    def is_leaf(self) -> bool:
        return True


@dataclass(eq=False)
class Internal:
    split: SplitRule
    left: "Node"
    right: "Node"
    n_samples: int
    cell: Cell
    surrogates: tuple[Surrogate, ...] = ()
    id: int = -1

    @property
    def is_leaf(self) -> bool:
        return False

    @property
    def majority_left(self) -> bool:
        return self.left.n_samples >= self.right.n_samples


Node = Leaf | Internal


@dataclass
class ForestParams:
    n_trees: int = 100
    max_features: str | int | float = "sqrt"
    min_samples: int = 1        # T: nodes with fewer samples become leaves
    min_leaf: int = 1           # minimum rows on each side of a split
    max_depth: int | None = None
    surrogates: int = 0         # surrogate splits recorded per node (<= MAX_SURROGATES)
    split_pure: bool = False    # keep splitting zero-gain nodes at the median of the widest feature
    bootstrap: bool = True

    def n_try(self, m: int) -> int:
        mf = self.max_features
        if mf == "sqrt":
            return max(1, math.ceil(math.sqrt(m)))
        if mf == "all" or mf is None:
            return m
        if isinstance(mf, float) and 0 < mf <= 1:
            return max(1, math.ceil(mf * m))
        return max(1, min(m, int(mf)))

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(eq=False)
class DecisionTree:
    root: Node
    schema: Schema
    n_train: int
    seed: int | None = None
    leaves: list[Leaf] = field(default_factory=list)
    internals: list[Internal] = field(default_factory=list)

    def __post_init__(self):
        if not self.leaves and not self.internals:
            self._index()

    def _index(self):
        self.leaves, self.internals = [], []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                node.id = len(self.leaves)
                self.leaves.append(node)
            else:
                node.id = len(self.internals)
                self.internals.append(node)
                stack.append(node.right)
                stack.append(node.left)

    @property
    def n_classes(self) -> int:
        return self.schema.n_classes

    @property
    def depth(self) -> int:
        best, stack = 0, [(self.root, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if not node.is_leaf:
                stack += [(node.left, d + 1), (node.right, d + 1)]
        return best

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf id per row of a complete feature matrix."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty(X.shape[0], dtype=np.int64)
        stack = [(self.root, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if idx.size == 0:
                continue
            if node.is_leaf:
                out[idx] = node.id
                continue
            go = node.split.goes_left(X[idx, node.split.feature])
            stack.append((node.left, idx[go]))
            stack.append((node.right, idx[~go]))
        return out

    @cached_property
    def _leaf_probs(self) -> np.ndarray:
        counts = np.array([leaf.counts for leaf in self.leaves], dtype=np.float64)
        return counts / counts.sum(axis=1, keepdims=True)

    def leaf_probs(self) -> np.ndarray:
        return self._leaf_probs


@dataclass(eq=False)
class RandomForest:
    trees: list[DecisionTree]
    schema: Schema
    params: ForestParams
    seed: int | None
    class_counts: np.ndarray

    def __post_init__(self):
        if len(self.trees) < 1:
            raise ValueError("a forest needs at least one tree")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def class_prior(self) -> np.ndarray:
        return self.class_counts / self.class_counts.sum()

    def tree_training_rows(self, j: int) -> np.ndarray:
        """Row indices (into the forest's training set) that tree ``j`` saw."""
        tree = self.trees[j]
        if not self.params.bootstrap or tree.seed is None:
            return np.arange(tree.n_train)
        return bootstrap_indices(tree.n_train, tree.seed)


# ---------------------------------------------------------------- impurity


def gini(counts: np.ndarray) -> np.ndarray:
    """Gini impurity of class-count vectors along the last axis."""
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / n[..., None]
        g = 1.0 - np.sum(p * p, axis=-1)
    return np.where(n > 0, g, 0.0)


def gini_gain(parent: np.ndarray, left: np.ndarray, right: np.ndarray) -> float:
    parent, left, right = (np.asarray(a, dtype=np.float64) for a in (parent, left, right))
    n, nl, nr = parent.sum(), left.sum(), right.sum()
    return float(gini(parent) - (nl * gini(left) + nr * gini(right)) / n)


# ---------------------------------------------------------------- split search


@dataclass
class _Candidate:
    gain: float
    rule: SplitRule


def _best_continuous(xs: np.ndarray, ys: np.ndarray, K: int, feature: int, parent_gini: float,
                     min_leaf: int) -> _Candidate | None:
    n = xs.size
    order = np.argsort(xs, kind="stable")
    xs, ys = xs[order], ys[order]
    valid = xs[:-1] < xs[1:]
    if min_leaf > 1:
        nl = np.arange(1, n)
        valid &= (nl >= min_leaf) & (n - nl >= min_leaf)
    if not valid.any():
        return None
    onehot = np.zeros((n, K))
    onehot[np.arange(n), ys] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]
    right = left[-1] + onehot[-1] - left
    nl = np.arange(1, n, dtype=np.float64)
    weighted = (nl * gini(left) + (n - nl) * gini(right)) / n
    gain = np.where(valid, parent_gini - weighted, -np.inf)
    i = int(np.argmax(gain))
    lo, hi = xs[i], xs[i + 1]
    t = lo + (hi - lo) / 2.0
    if not lo <= t < hi:
        t = lo
    return _Candidate(float(gain[i]), SplitRule(feature, threshold=float(t)))


def _category_partitions(c: int) -> np.ndarray:
    """All 2^(c-1)-1 binary partitions of c items as a bool matrix (left side).

    The last item always stays on the right, which removes mirror duplicates.
    """
    codes = np.arange(1, 2 ** (c - 1), dtype=np.int64)
    bits = (codes[:, None] >> np.arange(c - 1)) & 1
    return np.hstack([bits.astype(bool), np.zeros((codes.size, 1), bool)])


def _best_categorical(xs: np.ndarray, ys: np.ndarray, K: int, n_cats: int, feature: int,
                      parent_gini: float, min_leaf: int) -> _Candidate | None:
    codes = xs.astype(np.int64)
    table = np.zeros((n_cats, K))
    np.add.at(table, (codes, ys), 1.0)
    present = np.flatnonzero(table.sum(axis=1) > 0)
    c = present.size
    if c < 2:
        return None
    cc = table[present]
    if c <= MAX_EXHAUSTIVE_CATEGORIES:
        B = _category_partitions(c)
    else:
        rate = cc[:, 1] / cc.sum(axis=1) if K > 1 else np.zeros(c)
        order = np.lexsort((np.arange(c), -rate))
        B = np.zeros((c, c), bool)
        B[np.arange(c), order] = True
    L = B.astype(np.float64) @ cc
    R = cc.sum(axis=0) - L
    nl, nr = L.sum(axis=1), R.sum(axis=1)
    n = nl + nr
    weighted = (nl * gini(L) + nr * gini(R)) / n
    gain = parent_gini - weighted
    if min_leaf > 1:
        gain = np.where((nl >= min_leaf) & (nr >= min_leaf), gain, -np.inf)
    i = int(np.argmax(gain))
    if not np.isfinite(gain[i]):
        return None
    return _Candidate(float(gain[i]), SplitRule(feature, left_set=frozenset(present[B[i]].tolist())))


def _median_split(X: np.ndarray, idx: np.ndarray, cont: np.ndarray, min_leaf: int) -> SplitRule | None:
    """Split at the median of the continuous feature with the widest spread."""
    best = None
    for j in np.flatnonzero(cont):
        xs = np.sort(X[idx, j])
        spread = xs[-1] - xs[0]
        if spread > 0 and (best is None or spread > best[0]):
            best = (spread, j, xs)
    if best is None:
        return None
    _, j, xs = best
    n = xs.size
    positions = np.flatnonzero(xs[:-1] < xs[1:])
    nl = positions + 1
    positions = positions[(nl >= min_leaf) & (n - nl >= min_leaf)]
    if positions.size == 0:
        return None
    i = positions[np.argmin(np.abs(positions + 1 - n / 2))]
    lo, hi = xs[i], xs[i + 1]
    t = lo + (hi - lo) / 2.0
    if not lo <= t < hi:
        t = lo
    return SplitRule(int(j), threshold=float(t))


def _surrogates(X: np.ndarray, idx: np.ndarray, primary: SplitRule, went_left: np.ndarray,
                schema: Schema, limit: int) -> tuple[Surrogate, ...]:
    """Rank alternative splits by how often they reproduce the primary routing."""
    n = idx.size
    n_left = int(went_left.sum())
    baseline = max(n_left, n - n_left) / n
    card = schema.cardinalities
    found = []
    for j in range(schema.n_features):
        if j == primary.feature:
            continue
        xs = X[idx, j]
        if card[j] > 0:
            codes = xs.astype(np.int64)
            lc = np.bincount(codes, weights=went_left.astype(float), minlength=card[j])
            tc = np.bincount(codes, minlength=card[j]).astype(float)
            rc = tc - lc
            present = tc > 0
            left_cats = np.flatnonzero(present & (lc > rc))
            if left_cats.size == 0 or left_cats.size == int(present.sum()):
                continue
            agree = float(np.maximum(lc, rc)[present].sum() / n)
            found.append(Surrogate(SplitRule(j, left_set=frozenset(left_cats.tolist())), agree))
        else:
            order = np.argsort(xs, kind="stable")
            xs_s, gl = xs[order], went_left[order]
            valid = np.flatnonzero(xs_s[:-1] < xs_s[1:])
            if valid.size == 0:
                continue
            cum_left = np.cumsum(gl)[valid]
            size = valid + 1
            agree_le = (cum_left + (n - n_left) - (size - cum_left)) / n
            agree_gt = 1.0 - agree_le
            i_le, i_gt = int(np.argmax(agree_le)), int(np.argmax(agree_gt))
            reverse = agree_gt[i_gt] > agree_le[i_le]
            i = i_gt if reverse else i_le
            p = valid[i]
            lo, hi = xs_s[p], xs_s[p + 1]
            t = lo + (hi - lo) / 2.0
            if not lo <= t < hi:
                t = lo
            agree = float(agree_gt[i] if reverse else agree_le[i])
            found.append(Surrogate(SplitRule(j, threshold=float(t)), agree, bool(reverse)))
    found = [s for s in found if s.agreement > baseline]
    found.sort(key=lambda s: -s.agreement)
    return tuple(found[:limit])


# ---------------------------------------------------------------- learning


def learn_tree(d: Dataset, params: ForestParams | None = None, rng=None, seed: int | None = None) -> DecisionTree:
    """Grow one unpruned tree on complete data.

    At each node the features are visited in a fresh random order.  The best
    Gini split over the first ``n_try`` features is taken; if none of them
    admits a positive-gain split the search continues through the remaining
    features before the node is declared a leaf.
    """
    params = params or ForestParams()
    if d.missing.any():
        raise ValueError("learn_tree needs complete training data")
    rng = np.random.default_rng(rng)
    schema = d.schema
    X, y = d.X, d.y
    K = schema.n_classes
    m = schema.n_features
    card = schema.cardinalities
    cont = ~schema.is_categorical
    n_try = params.n_try(m)
    n_surr = min(params.surrogates, MAX_SURROGATES)

    def make_leaf(idx, cell):
        return Leaf(np.bincount(y[idx], minlength=K).astype(np.int64), idx, cell)

    def find_split(idx):
        counts = np.bincount(y[idx], minlength=K)
        pg = float(gini(counts))
        best = None
        for visited, j in enumerate(rng.permutation(m), start=1):
            xs, ys = X[idx, j], y[idx]
            if card[j] > 0:
                cand = _best_categorical(xs, ys, K, card[j], int(j), pg, params.min_leaf)
            else:
                cand = _best_continuous(xs, ys, K, int(j), pg, params.min_leaf)
            if cand is not None and cand.gain > GAIN_EPS and (best is None or cand.gain > best.gain):
                best = cand
            if visited >= n_try and best is not None:
                break
        return None if best is None else best.rule

    root_idx = np.arange(d.n)
    root_cell = Cell.full(schema)
    # explicit stack: (rows, cell, depth, parent, attach-as-left)
    holder: dict = {}
    stack = [(root_idx, root_cell, 0, None, False)]
    while stack:
        idx, cell, depth, parent, is_left = stack.pop()
        n = idx.size
        counts = np.bincount(y[idx], minlength=K)
        pure = np.count_nonzero(counts) <= 1
        stop = n < params.min_samples or n < 2 or (params.max_depth is not None and depth >= params.max_depth)
        rule = None
        if not stop:
            if not pure:
                rule = find_split(idx)
            if rule is None and params.split_pure:
                rule = _median_split(X, idx, cont, params.min_leaf)
        if rule is None:
            node = make_leaf(idx, cell)
        else:
            go = rule.goes_left(X[idx, rule.feature])
            lcell, rcell = cell.split(rule)
            surr = _surrogates(X, idx, rule, go, schema, n_surr) if n_surr else ()
            node = Internal(rule, None, None, int(n), cell, surr)
            stack.append((idx[~go], rcell, depth + 1, node, False))
            stack.append((idx[go], lcell, depth + 1, node, True))
        if parent is None:
            holder["root"] = node
        elif is_left:
            parent.left = node
        else:
            parent.right = node
    return DecisionTree(holder["root"], schema, d.n, seed)


def learn_forest(d: Dataset, params: ForestParams | None = None, seed: int = 0) -> RandomForest:
    params = params or ForestParams()
    if params.n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if d.missing.any():
        raise ValueError("learn_forest needs complete training data")
    master = np.random.default_rng(seed)
    tree_seeds = master.integers(0, 2**62, size=params.n_trees)
    trees = []
    for ts in tree_seeds:
        ts = int(ts)
        rows = bootstrap_indices(d.n, ts) if params.bootstrap else np.arange(d.n)
        tree = learn_tree(d.take(rows), params, rng=np.random.default_rng([ts, 1]))
        tree.seed = ts if params.bootstrap else None
        tree.n_train = d.n
        trees.append(tree)
    return RandomForest(trees, d.schema, params, seed, d.class_counts())


# ---------------------------------------------------------------- prediction


def predict_tree(tree: DecisionTree, x: np.ndarray) -> np.ndarray:
    """Class proportions of the leaf containing each complete row of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    probs = tree.leaf_probs()[tree.apply(np.atleast_2d(x))]
    return probs[0] if x.ndim == 1 else probs


def predict_forest(forest: RandomForest, x: np.ndarray) -> np.ndarray:
    """Soft vote: mean of per-tree class-probability vectors."""
    x = np.asarray(x, dtype=np.float64)
    X = np.atleast_2d(x)
    total = np.zeros((X.shape[0], forest.schema.n_classes))
    for tree in forest.trees:
        total += tree.leaf_probs()[tree.apply(X)]
    total /= forest.n_trees
    return total[0] if x.ndim == 1 else total


def iter_nodes(tree: DecisionTree) -> Iterator[Node]:
    stack = [tree.root]
    while stack:
        node = stack.pop()
        yield node
        if not node.is_leaf:
            stack += [node.right, node.left]

