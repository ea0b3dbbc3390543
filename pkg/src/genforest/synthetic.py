"""Small fixtures and synthetic generators with known densities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import CATEGORICAL, CLASS, CONTINUOUS, Column, Dataset, Schema
from .forest import DecisionTree, ForestParams, learn_tree

# ---------------------------------------------------------------- the three-leaf toy tree


def toy_schema() -> Schema:
    return Schema.build(
        [Column("X1", CATEGORICAL, ("0", "1")), Column("X2", CONTINUOUS)],
        Column("Y", CLASS, ("0", "1")),
    )


def toy_dataset() -> Dataset:
    """100 rows whose greedy tree splits X2 <= 0.5, then X1 = 0.

    Leaf class counts: (0, 40) at X2 <= .5, X1 = 0; (10, 30) at X2 <= .5,
    X1 = 1; (20, 0) at X2 > .5.
    """
    rows = ([(0, 0.25, 1)] * 40 + [(1, 0.25, 0)] * 10 + [(1, 0.25, 1)] * 30
            + [(0, 0.75, 0)] * 10 + [(1, 0.75, 0)] * 10)
    a = np.array(rows, dtype=np.float64)
    return Dataset(toy_schema(), a[:, :2], a[:, 2].astype(np.int64))


def toy_tree() -> tuple[DecisionTree, Dataset]:
    d = toy_dataset()
    return learn_tree(d, ForestParams(max_features="all"), rng=0), d


# ---------------------------------------------------------------- discrete toys


def random_discrete(n: int, m: int, n_classes: int = 2, cards=None, seed=0) -> Dataset:
    """Random categorical features; the label depends on a few of them plus noise."""
    rng = np.random.default_rng(seed)
    cards = [2] * m if cards is None else list(cards)
    X = np.column_stack([rng.integers(0, k, size=n) for k in cards]).astype(np.float64)
    coef = rng.normal(size=(m, n_classes))
    logits = (X / np.maximum(np.array(cards) - 1, 1)) @ coef * 2.0
    logits += rng.gumbel(size=logits.shape)
    y = np.argmax(logits, axis=1)
    feats = [Column(f"x{j}", CATEGORICAL, tuple(str(c) for c in range(k))) for j, k in enumerate(cards)]
    schema = Schema.build(feats, Column("y", CLASS, tuple(str(c) for c in range(n_classes))))
    return Dataset(schema, X, y)


# ---------------------------------------------------------------- Gaussian class mixtures


@dataclass(frozen=True)
class GaussianMixture:
    """p*(x, y) = prior[y] N(x; means[y], covs[y])."""

    prior: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def schema(self) -> Schema:
        feats = [Column(f"x{j + 1}", CONTINUOUS) for j in range(self.dim)]
        return Schema.build(feats, Column("y", CLASS, tuple(str(k) for k in range(len(self.prior)))))

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(rng)
        y = rng.choice(len(self.prior), size=n, p=self.prior)
        X = np.empty((n, self.dim))
        for k in range(len(self.prior)):
            idx = np.flatnonzero(y == k)
            X[idx] = rng.multivariate_normal(self.means[k], self.covs[k], size=idx.size)
        return X, y

    def dataset(self, n: int, rng) -> Dataset:
        X, y = self.sample(n, rng)
        return Dataset(self.schema(), X, y)

    def log_joint(self, X: np.ndarray, dims=None) -> np.ndarray:
        """log p*(x_dims, y) for every class, shape (n, K)."""
        dims = list(range(self.dim)) if dims is None else list(dims)
        X = np.atleast_2d(X)
        out = np.empty((X.shape[0], len(self.prior)))
        for k in range(len(self.prior)):
            if not dims:
                out[:, k] = np.log(self.prior[k])
                continue
            mvn = stats.multivariate_normal(self.means[k][dims], self.covs[k][np.ix_(dims, dims)])
            out[:, k] = np.log(self.prior[k]) + np.atleast_1d(mvn.logpdf(X[:, dims]))
        return out

    def bayes_risk(self, dims, grid: int = 1601, span: float = 9.0) -> float:
        """Misclassification rate of the Bayes rule that sees only ``dims``.

        Computed by quadrature on a regular grid (one or two dimensions).
        """
        dims = list(dims)
        if not dims:
            return float(1.0 - self.prior.max())
        lo = (self.means[:, dims] - span * np.sqrt(np.array([np.diag(c)[dims] for c in self.covs]))).min(axis=0)
        hi = (self.means[:, dims] + span * np.sqrt(np.array([np.diag(c)[dims] for c in self.covs]))).max(axis=0)
        if len(dims) == 1:
            g = np.linspace(lo[0], hi[0], grid * 4)
            pts = g[:, None]
            cell = g[1] - g[0]
        elif len(dims) == 2:
            gx, gy = np.linspace(lo[0], hi[0], grid), np.linspace(lo[1], hi[1], grid)
            pts = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
            cell = (gx[1] - gx[0]) * (gy[1] - gy[0])
        else:
            raise ValueError("quadrature supports at most two dimensions")
        full = np.zeros((pts.shape[0], self.dim))
        full[:, dims] = pts
        joint = np.exp(self.log_joint(full, dims))
        return float((joint.sum(axis=1) - joint.max(axis=1)).sum() * cell)


def default_mixture() -> GaussianMixture:
    return GaussianMixture(
        prior=np.array([0.6, 0.4]),
        means=np.array([[0.0, 0.0], [1.5, 1.0]]),
        covs=np.array([[[1.0, 0.3], [0.3, 1.0]], [[0.8, -0.2], [-0.2, 1.2]]]),
    )


# ---------------------------------------------------------------- imputation counterexample


@dataclass(frozen=True)
class BandProblem:
    """X1, X2 jointly Gaussian; Y = 1{|x2 - E[X2 | x1]| > eps}.

    With X2 unobserved the Bayes rule predicts the constant label
    ``P(|Z| > eps / s) > 1/2`` where ``s`` is the conditional std of X2.
    """

    rho: float
    eps: float

    @property
    def cond_std(self) -> float:
        return float(np.sqrt(1.0 - self.rho ** 2))

    def schema(self) -> Schema:
        return Schema.build([Column("x1", CONTINUOUS), Column("x2", CONTINUOUS)], Column("y", CLASS, ("0", "1")))

    def dataset(self, n: int, rng) -> Dataset:
        rng = np.random.default_rng(rng)
        x1 = rng.normal(size=n)
        x2 = self.rho * x1 + self.cond_std * rng.normal(size=n)
        y = (np.abs(x2 - self.rho * x1) > self.eps).astype(np.int64)
        return Dataset(self.schema(), np.column_stack([x1, x2]), y)

    def p_positive(self) -> float:
        """P(Y = 1 | x1), the same for every x1."""
        return float(2.0 * stats.norm.sf(self.eps / self.cond_std))

    def bayes_accuracy_x1_only(self) -> float:
        p = self.p_positive()
        return max(p, 1.0 - p)


# ---------------------------------------------------------------- shifted samples for outlier scoring


def gaussian_blobs(n: int, dim: int = 5, n_classes: int = 2, shift: float = 0.0, rng=None) -> Dataset:
    """Unit-variance blobs whose class means differ along the first axis.

    ``shift`` moves every coordinate's mean, so shifted rows leave the
    in-distribution region instead of landing on another class.
    """
    rng = np.random.default_rng(rng)
    centers = np.zeros((n_classes, dim))
    centers[:, 0] = np.linspace(-1.5, 1.5, n_classes)
    y = rng.integers(0, n_classes, size=n)
    X = centers[y] + rng.normal(size=(n, dim)) + shift
    schema = Schema.build([Column(f"x{j + 1}", CONTINUOUS) for j in range(dim)],
                          Column("y", CLASS, tuple(str(k) for k in range(n_classes))))
    return Dataset(schema, X, y)
