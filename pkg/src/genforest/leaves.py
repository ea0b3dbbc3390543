"""Joint densities over (X, Y) attached to tree leaves.

Each density exposes ``scope`` (variable ids, class = m), and
``log_density(values, missing)`` on (n, m + 1) query matrices, marginalising
every missing variable in its scope.  Densities built for a tree leaf also
hold the leaf cell and return -inf for observed values outside it.
"""
from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.sparse.csgraph import connected_components

from .circuit import (
    CircuitBuilder,
    LeafNode,
    ProductNode,
    SumNode,
    circuit_from_dict,
    circuit_to_dict,
    log_eval,
    make_query,
    register_leaf,
)
from .data import Schema
from .forest import Cell

NEG_INF = -np.inf
LOG_2PI = math.log(2.0 * math.pi)

SIGMA_FLOOR = 1e-3
ALPHA = 0.01
LEARNSPN_MIN_INSTANCES = 30
LEARNSPN_THRESHOLD = 0.001
KMEANS_ITERS = 20


class LeafFitError(ValueError):
    pass


class UnboundedCell(LeafFitError):
    pass


class ZeroVolume(LeafFitError):
    pass


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _support(cell: Cell | None, values: np.ndarray, missing: np.ndarray) -> np.ndarray:
    if cell is None:
        return np.zeros(values.shape[0])
    m = cell.m
    inside = cell.contains(values[:, :m], missing[:, :m])
    return np.where(inside, 0.0, NEG_INF)


def _class_term(class_var: int, probs: np.ndarray, values: np.ndarray, missing: np.ndarray) -> np.ndarray:
    miss = missing[:, class_var]
    idx = np.where(miss, 0, values[:, class_var]).astype(np.int64)
    with np.errstate(divide="ignore"):
        logp = np.log(probs)[idx]
    return np.where(miss, 0.0, logp)


class LeafDensity:
    kind = "abstract"
    scope: frozenset[int]

    def log_density(self, values: np.ndarray, missing: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class _ClassFactorMixin:
    """Leaves of the form f(x) p(y): the class vector does not depend on x."""

    class_probs: np.ndarray

    def class_split(self, values: np.ndarray, missing: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = self.log_density(values, missing)  # class column is missing here
        return s, np.broadcast_to(self.class_probs, (values.shape[0], self.class_probs.size))


# ---------------------------------------------------------------- univariate pieces


@register_leaf
class Gaussian(LeafDensity):
    """Untruncated normal over one continuous variable."""

    kind = "gaussian"

    def __init__(self, var: int, mean: float, std: float):
        self.var, self.mean, self.std = int(var), float(mean), float(std)
        self.scope = frozenset((self.var,))

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        z = (x - self.mean) / self.std
        return -0.5 * LOG_2PI - math.log(self.std) - 0.5 * z * z

    def log_density(self, values, missing):
        miss = missing[:, self.var]
        return np.where(miss, 0.0, self.log_pdf(np.where(miss, self.mean, values[:, self.var])))

    def to_dict(self):
        return {"kind": self.kind, "var": self.var, "mean": _fmt(self.mean), "std": _fmt(self.std)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["var"], float(d["mean"]), float(d["std"]))


@register_leaf
class Categorical(LeafDensity):
    """Probability vector over the states of one discrete variable."""

    kind = "categorical"

    def __init__(self, var: int, probs: Sequence[float]):
        self.var = int(var)
        self.probs = np.asarray(probs, dtype=np.float64)
        self.scope = frozenset((self.var,))
        with np.errstate(divide="ignore"):
            self._logp = np.log(self.probs)

    def log_density(self, values, missing):
        miss = missing[:, self.var]
        col = np.where(miss, 0, values[:, self.var])
        bad = (col < 0) | (col >= self.probs.size)
        idx = np.clip(col, 0, self.probs.size - 1).astype(np.int64)
        out = np.where(bad, NEG_INF, self._logp[idx])
        return np.where(miss, 0.0, out)

    def to_dict(self):
        return {"kind": self.kind, "var": self.var, "probs": [_fmt(p) for p in self.probs]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["var"], [float(p) for p in d["probs"]])


def _fit_univariate(var: int, col: np.ndarray, cardinality: int, allowed: np.ndarray | None,
                    alpha: float, sigma_floor: float):
    if cardinality == 0:
        return Gaussian(var, col.mean(), max(col.std(), sigma_floor))
    counts = np.bincount(col.astype(np.int64), minlength=cardinality).astype(np.float64)
    if allowed is None:  # the class variable: plain maximum likelihood
        return Categorical(var, counts / counts.sum())
    smoothed = np.where(allowed, counts + alpha, 0.0)
    return Categorical(var, smoothed / smoothed.sum())


# ---------------------------------------------------------------- class-factorised


@register_leaf
class ClassFactorized(_ClassFactorMixin, LeafDensity):
    """p(x_1) ... p(x_m) p(y) restricted to a cell.

    ``components`` maps feature id to a ``Gaussian`` or ``Categorical``;
    features without a component are treated as fixed by the cell (their
    factor is 1 on the cell).
    """

    kind = "class_factorized"

    def __init__(self, n_vars: int, components: dict[int, LeafDensity], class_counts: Sequence[int],
                 cell: Cell | None = None):
        self.n_vars = int(n_vars)
        self.components = dict(sorted(components.items()))
        self.class_counts = np.asarray(class_counts, dtype=np.int64)
        self.class_probs = self.class_counts / self.class_counts.sum()
        self.cell = cell
        self.scope = frozenset(range(self.n_vars)) if cell is not None else \
            frozenset(self.components) | {self.n_vars - 1}
        gauss = [c for c in self.components.values() if isinstance(c, Gaussian)]
        self._g_vars = np.array([c.var for c in gauss], dtype=np.int64)
        self._g_mean = np.array([c.mean for c in gauss])
        self._g_std = np.array([c.std for c in gauss])
        self._g_const = -0.5 * LOG_2PI - np.log(self._g_std)
        self._cats = [c for c in self.components.values() if not isinstance(c, Gaussian)]

    @property
    def class_var(self) -> int:
        return self.n_vars - 1

    def log_density(self, values, missing):
        out = _support(self.cell, values, missing)
        if self._g_vars.size:
            z = (values[:, self._g_vars] - self._g_mean) / self._g_std
            terms = self._g_const - 0.5 * z * z
            out = out + np.where(missing[:, self._g_vars], 0.0, terms).sum(axis=1)
        for comp in self._cats:
            out = out + comp.log_density(values, missing)
        return out + _class_term(self.class_var, self.class_probs, values, missing)

    def pulled_up(self) -> "ClassFactorized":
        """Copy without the cell check and without factors the cell pins to one state."""
        keep = {j: c for j, c in self.components.items()
                if not (self.cell is not None and self.cell.is_singleton(j))}
        return ClassFactorized(self.n_vars, keep, self.class_counts, None)

    def to_dict(self):
        return {
            "kind": self.kind,
            "n_vars": self.n_vars,
            "components": [c.to_dict() for c in self.components.values()],
            "class_counts": self.class_counts.tolist(),
            "cell": None if self.cell is None else self.cell.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        comps = {}
        for e in d["components"]:
            c = Gaussian.from_dict(e) if e["kind"] == "gaussian" else Categorical.from_dict(e)
            comps[c.var] = c
        cell = None if d["cell"] is None else Cell.from_dict(d["cell"])
        return cls(d["n_vars"], comps, d["class_counts"], cell)


def fit_class_factorized(X: np.ndarray, y: np.ndarray, cell: Cell, schema: Schema,
                         alpha: float = ALPHA, sigma_floor: float = SIGMA_FLOOR) -> ClassFactorized:
    """Fully factorised leaf: Gaussian / Laplace-smoothed categorical features,
    maximum-likelihood class fractions."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise LeafFitError("cannot fit a leaf density on zero rows")
    card = schema.cardinalities
    cont = card == 0
    mean = X[:, cont].mean(axis=0)
    std = np.maximum(X[:, cont].std(axis=0), sigma_floor)
    comps = dict(zip(np.flatnonzero(cont).tolist(), (Gaussian(j, mu, sd) for j, mu, sd in
                                                      zip(np.flatnonzero(cont), mean, std))))
    for j in np.flatnonzero(~cont):
        comps[int(j)] = _fit_univariate(int(j), X[:, j], int(card[j]), cell.allowed[j], alpha, sigma_floor)
    counts = np.bincount(y, minlength=schema.n_classes)
    return ClassFactorized(schema.n_features + 1, comps, counts, cell)


# ---------------------------------------------------------------- uniform on the cell


@register_leaf
class UniformCell(_ClassFactorMixin, LeafDensity):
    """Uniform density on a bounded cell times a class distribution.

    Categorical coordinates are uniform over the cell's allowed states.
    """

    kind = "uniform_cell"

    def __init__(self, cell: Cell, class_counts: Sequence[int]):
        self.cell = cell
        self.class_counts = np.asarray(class_counts, dtype=np.int64)
        self.class_probs = self.class_counts / self.class_counts.sum()
        self.n_vars = cell.m + 1
        self.scope = frozenset(range(self.n_vars))
        sides = cell.side_lengths()
        self._log_side = np.array([
            -math.log(int(a.sum())) if a is not None else -math.log(sides[j])
            for j, a in enumerate(cell.allowed)
        ])

    def log_density(self, values, missing):
        m = self.cell.m
        out = _support(self.cell, values, missing)
        out = out + np.where(missing[:, :m], 0.0, self._log_side[None, :]).sum(axis=1)
        return out + _class_term(m, self.class_probs, values, missing)

    def volume(self) -> float:
        return float(np.exp(-self._log_side.sum()))

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """``n`` draws of (x, y): x uniform on the cell, y from the class fractions."""
        rng = np.random.default_rng(rng)
        m = self.cell.m
        X = np.empty((n, m))
        for j, a in enumerate(self.cell.allowed):
            if a is None:
                # (lo, hi]: reflect the half-open uniform draw onto the closed upper end
                X[:, j] = self.cell.hi[j] - (self.cell.hi[j] - self.cell.lo[j]) * rng.random(n)
            else:
                X[:, j] = rng.choice(np.flatnonzero(a), size=n)
        y = rng.choice(self.class_probs.size, size=n, p=self.class_probs)
        return X, y

    def to_dict(self):
        return {"kind": self.kind, "cell": self.cell.to_dict(), "class_counts": self.class_counts.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(Cell.from_dict(d["cell"]), d["class_counts"])


def fit_uniform(cell: Cell, class_counts: Sequence[int]) -> UniformCell:
    sides = cell.side_lengths()
    cont = ~np.isnan(sides)
    if not np.all(np.isfinite(sides[cont])):
        raise UnboundedCell(f"uniform leaf needs a bounded cell, got {cell!r}")
    if np.any(sides[cont] <= 0) or any(a is not None and not a.any() for a in cell.allowed):
        raise ZeroVolume(f"cell has zero volume: {cell!r}")
    return UniformCell(cell, class_counts)


# ---------------------------------------------------------------- constant over X


@register_leaf
class ConstantLeaf(_ClassFactorMixin, LeafDensity):
    """Constant (unit) density over X on the cell times ML class fractions.

    Not normalised over X; it reproduces count-based voting when every leaf
    of a forest uses it.
    """

    kind = "constant"

    def __init__(self, cell: Cell, class_counts: Sequence[int]):
        self.cell = cell
        self.class_counts = np.asarray(class_counts, dtype=np.int64)
        self.class_probs = self.class_counts / self.class_counts.sum()
        self.n_vars = cell.m + 1
        self.scope = frozenset(range(self.n_vars))

    def log_density(self, values, missing):
        return _support(self.cell, values, missing) + _class_term(self.cell.m, self.class_probs, values, missing)

    def exact_density(self, values: np.ndarray, missing: np.ndarray) -> Fraction:
        m = self.cell.m
        if not self.cell.contains(values[None, :m], missing[None, :m])[0]:
            return Fraction(0)
        if missing[m]:
            return Fraction(1)
        return Fraction(int(self.class_counts[int(values[m])]), int(self.class_counts.sum()))

    def to_dict(self):
        return {"kind": self.kind, "cell": self.cell.to_dict(), "class_counts": self.class_counts.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(Cell.from_dict(d["cell"]), d["class_counts"])


def fit_constant(X, y, cell: Cell, schema: Schema) -> ConstantLeaf:
    return ConstantLeaf(cell, np.bincount(np.asarray(y, dtype=np.int64), minlength=schema.n_classes))


# ---------------------------------------------------------------- LearnSPN-lite


@register_leaf
class LearnSPNLite(LeafDensity):
    """Leaf whose density is a small sum-product circuit over (X, Y)."""

    kind = "learnspn"

    def __init__(self, circuit, cell: Cell | None):
        self.circuit = circuit
        self.cell = cell
        self.n_vars = circuit.n_vars
        self.scope = frozenset(range(self.n_vars))

    def log_density(self, values, missing):
        return _support(self.cell, values, missing) + log_eval(self.circuit, values, missing)

    def to_dict(self):
        return {"kind": self.kind, "circuit": circuit_to_dict(self.circuit),
                "cell": None if self.cell is None else self.cell.to_dict()}

    @classmethod
    def from_dict(cls, d):
        cell = None if d["cell"] is None else Cell.from_dict(d["cell"])
        return cls(circuit_from_dict(d["circuit"]), cell)


def _dependency_components(Z: np.ndarray, cards: np.ndarray, threshold: float) -> np.ndarray:
    """Connected components of the graph linking pairs whose independence is rejected."""
    n, k = Z.shape
    dep = np.zeros((k, k), dtype=bool)
    std = Z.std(axis=0)
    varying = std > 0
    zs = np.where(varying, (Z - Z.mean(axis=0)) / np.where(varying, std, 1.0), 0.0)
    r = np.clip(zs.T @ zs / n, -1.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = r * np.sqrt((n - 2) / np.maximum(1.0 - r * r, 1e-300))
    p_corr = 2.0 * stats.t.sf(np.abs(t), df=max(n - 2, 1))
    for a in range(k):
        for b in range(a + 1, k):
            if not (varying[a] and varying[b]):
                continue
            if cards[a] > 0 and cards[b] > 0:
                table = np.zeros((cards[a], cards[b]))
                np.add.at(table, (Z[:, a].astype(np.int64), Z[:, b].astype(np.int64)), 1.0)
                table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
                if min(table.shape) < 2:
                    continue
                p = stats.chi2_contingency(table, correction=False, lambda_="log-likelihood")[1]
            else:
                p = p_corr[a, b]
            if p < threshold:
                dep[a, b] = dep[b, a] = True
    _, labels = connected_components(dep, directed=False)
    return labels


def _farthest_pair(E: np.ndarray, chunk: int = 1024) -> tuple[int, int]:
    best, pair = -1.0, (0, min(1, E.shape[0] - 1))
    sq = np.sum(E * E, axis=1)
    for start in range(0, E.shape[0], chunk):
        block = E[start:start + chunk]
        d2 = sq[start:start + chunk, None] + sq[None, :] - 2.0 * block @ E.T
        i, j = np.unravel_index(int(np.argmax(d2)), d2.shape)
        if d2[i, j] > best:
            best, pair = float(d2[i, j]), (start + int(i), int(j))
    return pair


def two_means(Z: np.ndarray, cards: np.ndarray, max_iter: int = KMEANS_ITERS) -> np.ndarray | None:
    """2-means on locally standardised continuous columns and one-hot categoricals.

    Seeds are the two rows farthest apart.  Returns a 0/1 label per row, or
    None when the rows cannot be separated.
    """
    cols = []
    for a in range(Z.shape[1]):
        col = Z[:, a]
        if cards[a] > 0:
            cols.append(np.eye(int(cards[a]))[col.astype(np.int64)])
        else:
            s = col.std()
            cols.append(((col - col.mean()) / (s if s > 0 else 1.0))[:, None])
    E = np.hstack(cols)
    i, j = _farthest_pair(E)
    centers = E[[i, j]].copy()
    if np.allclose(centers[0], centers[1]):
        return None
    labels = None
    for _ in range(max_iter):
        d = ((E[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = (d[:, 1] < d[:, 0]).astype(np.int64)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        if labels.min() == labels.max():
            return None
        centers = np.stack([E[labels == 0].mean(axis=0), E[labels == 1].mean(axis=0)])
    if labels.min() == labels.max():
        return None
    return labels


def fit_learnspn_lite(X: np.ndarray, y: np.ndarray, cell: Cell, schema: Schema,
                      min_instances: int = LEARNSPN_MIN_INSTANCES, threshold: float = LEARNSPN_THRESHOLD,
                      alpha: float = ALPHA, sigma_floor: float = SIGMA_FLOOR) -> LeafDensity:
    """Small LearnSPN over (X, Y); falls back to a factorised leaf for small samples.

    Products split variables into groups whose pairwise independence is not
    rejected at ``threshold``; sums split rows by 2-means.  The class is an
    ordinary variable here.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise LeafFitError("cannot fit a leaf density on zero rows")
    if X.shape[0] <= min_instances:
        return fit_class_factorized(X, y, cell, schema, alpha, sigma_floor)

    m = schema.n_features
    Z = np.hstack([X, y[:, None].astype(np.float64)])
    cards = np.append(schema.cardinalities, schema.n_classes)
    allowed = list(cell.allowed) + [None]
    b = CircuitBuilder()

    def univariate(rows, var):
        return b.add(LeafNode(_fit_univariate(var, Z[rows, var], int(cards[var]), allowed[var], alpha, sigma_floor)))

    def factorized(rows, variables):
        kids = [univariate(rows, v) for v in variables]
        return kids[0] if len(kids) == 1 else b.add(ProductNode(tuple(kids)))

    def learn(rows: np.ndarray, variables: list[int], try_product: bool) -> int:
        if len(variables) == 1:
            return univariate(rows, variables[0])
        if rows.size <= min_instances:
            return factorized(rows, variables)
        if try_product:
            labels = _dependency_components(Z[np.ix_(rows, variables)], cards[variables], threshold)
            if labels.max() > 0:
                groups = [[v for v, lab in zip(variables, labels) if lab == g] for g in range(labels.max() + 1)]
                return b.add(ProductNode(tuple(learn(rows, grp, False) for grp in groups)))
        split = two_means(Z[np.ix_(rows, variables)], cards[variables])
        if split is None:
            return factorized(rows, variables)
        parts = [rows[split == 0], rows[split == 1]]
        kids = [learn(p, variables, True) for p in parts]
        return b.add(SumNode.from_counts(kids, [p.size for p in parts]))

    root = learn(np.arange(Z.shape[0]), list(range(m + 1)), True)
    return LearnSPNLite(b.build(root, m + 1, schema), cell)


def leaf_marginal(leaf: LeafDensity, x, missing=None, y=None) -> np.ndarray | float:
    """Log marginal of a leaf density for partial instance(s); ``y=None`` marginalises the class."""
    single = np.ndim(x) == 1
    values, miss = make_query(x, missing, y)
    out = leaf.log_density(values, miss)
    return float(out[0]) if single else out
