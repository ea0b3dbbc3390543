"""Classification with missing inputs by marginalisation, and density scores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import class_conditional, logsumexp_rows, make_query
from .convert import GeDT, GeF


class ModeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ClassPosterior:
    """Row-wise class probabilities for a batch of queries."""

    probs: np.ndarray  # (n, K)

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)  # first maximum wins ties

    def __len__(self):
        return self.probs.shape[0]


def _query(x, missing, n_vars):
    if isinstance(x, tuple) and len(x) == 2 and missing is None:  # a PartialInstance-like pair
        x, missing = x
    if hasattr(x, "values") and hasattr(x, "missing"):
        x, missing = x.values, x.missing
    x = np.asarray(x, dtype=np.float64)
    if missing is None:
        missing = np.isnan(x)
    missing = np.asarray(missing, dtype=bool)
    x = np.where(missing, 0.0, x)
    return make_query(x, missing, None, n_vars)


def _split(gedt: GeDT, values, missing) -> tuple[np.ndarray, np.ndarray]:
    """(log p(x_o), p(y | x_o)) of one tree for every query."""
    return class_conditional(gedt.circuit, values, missing, gedt.n_classes)


def _fallback(s: np.ndarray, q: np.ndarray, prior: np.ndarray) -> np.ndarray:
    dead = ~np.isfinite(s) | ~np.isfinite(q).all(axis=1)
    if dead.any():
        q = np.array(q, copy=True)
        q[dead] = prior
    return q


def _normalise(p: np.ndarray) -> np.ndarray:
    return p / p.sum(axis=1, keepdims=True)


def predict_gedt(gedt: GeDT, x, missing=None) -> ClassPosterior:
    """P(Y | x_o) of one generative tree.

    ``x`` is (n, m) or (m,); ``missing`` marks unobserved features (NaN in
    ``x`` also counts as missing).  Queries with zero density fall back to
    the tree's root class fractions.
    """
    values, miss = _query(x, missing, gedt.circuit.n_vars)
    s, q = _split(gedt, values, miss)
    return ClassPosterior(_normalise(_fallback(s, q, gedt.class_prior)))


def _check_mode(gef: GeF, mode: str):
    if gef.mode != mode:
        raise ModeMismatch(f"model is in {gef.mode!r} mode, this predictor needs {mode!r}")


def predict_gef(gef: GeF, x, missing=None) -> ClassPosterior:
    """Average of the per-tree conditionals P_j(Y | x_o)."""
    _check_mode(gef, "gef")
    values, miss = _query(x, missing, gef.gedts[0].circuit.n_vars)
    total = np.zeros((values.shape[0], gef.n_classes))
    for g in gef.gedts:
        s, q = _split(g, values, miss)
        total += _normalise(_fallback(s, q, gef.class_prior))
    return ClassPosterior(total / gef.n_trees)


def _mixture(gef: GeF, values, miss) -> tuple[np.ndarray, np.ndarray]:
    """log of the mixture marginal n_t^-1 Σ_j p_j(x_o), and the mixture P(Y | x_o)."""
    S, Q = [], []
    for g in gef.gedts:
        s, q = _split(g, values, miss)
        S.append(s)
        Q.append(q)
    S = np.vstack(S)
    top = logsumexp_rows(S)
    with np.errstate(invalid="ignore", under="ignore"):
        r = np.exp(S - np.where(np.isfinite(top), top, 0.0)[None, :])
    post = np.zeros((values.shape[0], gef.n_classes))
    for rj, qj in zip(r, Q):
        post += np.where(rj[:, None] > 0, rj[:, None] * qj, 0.0)
    return top - np.log(gef.n_trees), post


def predict_gefplus(gef: GeF, x, missing=None) -> ClassPosterior:
    """Posterior of the uniform mixture of tree joints.

    Trees that give the query zero density drop out of the mixture.
    """
    _check_mode(gef, "gefplus")
    values, miss = _query(x, missing, gef.gedts[0].circuit.n_vars)
    logp, post = _mixture(gef, values, miss)
    return ClassPosterior(_normalise(_fallback(logp, post, gef.class_prior)))


def predict(gef: GeF, x, missing=None) -> ClassPosterior:
    """Dispatch on the model's combination mode."""
    return predict_gefplus(gef, x, missing) if gef.mode == "gefplus" else predict_gef(gef, x, missing)


def outlier_score(gef: GeF, x, missing=None) -> np.ndarray:
    """log p(x_o) under the uniform mixture of tree joints, class marginalised."""
    _check_mode(gef, "gefplus")
    values, miss = _query(x, missing, gef.gedts[0].circuit.n_vars)
    logp, _ = _mixture(gef, values, miss)
    return logp
