"""Accuracy summaries, ROC AUC, and histogram tables."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

log = logging.getLogger(__name__)

Z95 = 1.96


def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    return float(np.mean(pred == truth))


def mean_halfwidth(values: Sequence[float]) -> tuple[float, float]:
    """Mean and normal-approximation 95% half-width 1.96 s / sqrt(n)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values to summarise")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(Z95 * v.std(ddof=1) / np.sqrt(v.size))


def auc_roc(in_scores, out_scores) -> float:
    """P(in > out) + P(in = out) / 2 via the Mann-Whitney U statistic.

    In-distribution scores are the positive class (expected to be higher).
    """
    a = np.asarray(in_scores, dtype=np.float64).ravel()
    b = np.asarray(out_scores, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both score lists must be nonempty")
    ranks = rankdata(np.concatenate([a, b]))  # average ranks handle ties (and -inf)
    u = ranks[: a.size].sum() - a.size * (a.size + 1) / 2.0
    return float(u / (a.size * b.size))


def auc_pairs(in_scores, out_scores) -> float:
    """All-pairs reference for ``auc_roc`` (quadratic; small inputs only)."""
    a = np.asarray(in_scores, dtype=np.float64).ravel()
    b = np.asarray(out_scores, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both score lists must be nonempty")
    wins = (a[:, None] > b[None, :]).sum() + 0.5 * (a[:, None] == b[None, :]).sum()
    return float(wins / (a.size * b.size))


def histogram_table(groups: Mapping[str, Sequence[float]], bins: int | Sequence[float] = 30):
    """Normalised histograms on shared bin edges.

    Returns ``(centers, {group: densities}, edges)``.  Groups with no
    finite scores are dropped with a warning.
    """
    kept = {}
    for name, scores in groups.items():
        s = np.asarray(scores, dtype=np.float64).ravel()
        s = s[np.isfinite(s)]
        if s.size == 0:
            log.warning("histogram group %r has no finite scores; omitted", name)
            continue
        kept[name] = s
    if not kept:
        return np.empty(0), {}, np.empty(0)
    if np.ndim(bins) == 0:
        allv = np.concatenate(list(kept.values()))
        lo, hi = float(allv.min()), float(allv.max())
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=np.float64)
    centers = (edges[:-1] + edges[1:]) / 2.0
    dens = {name: np.histogram(s, bins=edges, density=True)[0] for name, s in kept.items()}
    return centers, dens, edges


def emit_histograms(groups: Mapping[str, Sequence[float]], bins: int | Sequence[float], path) -> Path:
    """Write a tab-separated table: bin center, then one density column per group."""
    centers, dens, _ = histogram_table(groups, bins)
    path = Path(path)
    names = list(dens)
    lines = ["\t".join(["bin_center"] + names)]
    for i, c in enumerate(centers):
        lines.append("\t".join([format(c, ".10g")] + [format(dens[n][i], ".10g") for n in names]))
    path.write_text("\n".join(lines) + "\n")
    return path
