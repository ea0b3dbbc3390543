"""Experiment runners: missing-data benchmark, consistency, imputation counterexample, outliers."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..baselines import KNNImputer, MeanImputer, friedman_predict, surrogate_predict
from ..circuit import LeafNode, SumNode, log_eval, make_query
from ..convert import GeDT, bounding_box, dt_to_gedt, leaf_fitter, rf_to_gef, uniform_fitter
from ..data import Dataset, inject_mcar, kfold, standardize
from ..forest import ForestParams, learn_forest, learn_tree, predict_forest
from ..inference import outlier_score, predict_gedt, predict_gef, predict_gefplus
from ..synthetic import BandProblem, GaussianMixture, default_mixture, gaussian_blobs
from .config import ConsistencyConfig, CounterexampleConfig, ExperimentConfig, OutlierConfig, load_dataset
from .metrics import accuracy, auc_roc, emit_histograms, mean_halfwidth

log = logging.getLogger(__name__)


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".6f")
    return str(x)


def write_table(rows: list[dict], path) -> Path:
    """Tab-separated table; columns in the order of the first row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(rows[0]) if rows else []
    lines = ["\t".join(cols)] + ["\t".join(_fmt(r[c]) for c in cols) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------- missing-data benchmark


@dataclass
class ExperimentReport:
    """Per (dataset, method, rate) accuracies over repeats x folds, in run order."""

    runs: dict = field(default_factory=dict)  # (dataset, method, rate) -> list of accuracies
    extra: dict = field(default_factory=dict)

    def add(self, dataset: str, method: str, rate: float, acc: float):
        self.runs.setdefault((dataset, method, float(rate)), []).append(float(acc))

    def rows(self) -> list[dict]:
        out = []
        for (ds, method, rate), accs in self.runs.items():
            mean, hw = mean_halfwidth(accs)
            out.append({"dataset": ds, "method": method, "rate": rate, "accuracy": mean,
                        "halfwidth": hw, "runs": len(accs)})
        return out

    def mean(self, dataset: str, method: str, rate: float) -> float:
        return float(np.mean(self.runs[(dataset, method, float(rate))]))

    def to_tsv(self) -> str:
        rows = self.rows()
        cols = ["dataset", "method", "rate", "accuracy", "halfwidth", "runs"]
        lines = ["\t".join(cols)] + ["\t".join(_fmt(r[c]) for c in cols) for r in rows]
        return "\n".join(lines) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_tsv())
        return path


def _predictors(cfg: ExperimentConfig, train: Dataset, forest_seed):
    """Fit the forest and every requested method; returns {method: f(X, missing) -> labels}."""
    methods = cfg.methods
    params = ForestParams(n_trees=cfg.n_trees, min_samples=cfg.min_samples,
                          surrogates=5 if "surrogate" in methods else 0)
    forest = learn_forest(train, params, seed=forest_seed)
    out = {}

    def rf_on(impute):
        return lambda X, miss: np.argmax(predict_forest(forest, impute(X, miss)), axis=1)

    if "rf" in methods:
        out["rf"] = None  # evaluated on the unmasked rows
    if "surrogate" in methods:
        out["surrogate"] = lambda X, miss: surrogate_predict(forest, X, miss)
    if "friedman" in methods:
        out["friedman"] = lambda X, miss: friedman_predict(forest, X, miss)
    if "mean" in methods:
        out["mean"] = rf_on(MeanImputer.fit(train).impute)
    if "knn" in methods:
        out["knn"] = rf_on(KNNImputer.fit(train, k=cfg.knn_k).impute)
    if "gef" in methods or "gefplus" in methods:
        gef = rf_to_gef(forest, train, leaf_fitter(cfg.leaf, train), "gef", cfg.leaf)
        if "gef" in methods:
            out["gef"] = lambda X, miss: predict_gef(gef, X, miss).labels
        if "gefplus" in methods:
            plus = gef.with_mode("gefplus")
            out["gefplus"] = lambda X, miss: predict_gefplus(plus, X, miss).labels
    if "gef_lspn" in methods:
        lspn = rf_to_gef(forest, train, leaf_fitter("learnspn"), "gef", "learnspn")
        out["gef_lspn"] = lambda X, miss: predict_gef(lspn, X, miss).labels
    return forest, out


def run_missing_benchmark(cfg: ExperimentConfig, progress: bool = False) -> ExperimentReport:
    """Repeated k-fold accuracy of every method on test folds with MCAR features.

    Continuous features are standardised with train-fold statistics.  All
    methods see the same masked queries; ``rf`` is the forest on the
    unmasked test rows.
    """
    report = ExperimentReport()
    schemas = cfg.schemas or (None,) * len(cfg.datasets)
    for di, (name, schema) in enumerate(zip(cfg.datasets, schemas)):
        d = load_dataset(name, schema)
        label = Path(name).stem
        folds = kfold(d.n, cfg.folds, cfg.repeats, seed=[cfg.seed, di])
        for r in range(cfg.repeats):
            for f in range(cfg.folds):
                test_rows = np.flatnonzero(folds[r] == f)
                train_rows = np.flatnonzero(folds[r] != f)
                train, (test,), _ = standardize(d.take(train_rows), [d.take(test_rows)])
                forest, preds = _predictors(cfg, train, [cfg.seed, di, r, f])
                for ri, rate in enumerate(cfg.rates):
                    masked = inject_mcar(test, rate, seed=[cfg.seed, di, r, f, ri, 1])
                    for method in cfg.methods:
                        if method == "rf":
                            p = np.argmax(predict_forest(forest, test.X), axis=1)
                        else:
                            p = preds[method](masked.X, masked.missing)
                        report.add(label, method, rate, accuracy(p, test.y))
                if progress:
                    log.info("%s repeat %d fold %d done", label, r, f)
    if cfg.out:
        report.write(Path(cfg.out) / "missing_benchmark.tsv")
    return report


# ---------------------------------------------------------------- consistency


def leaf_masses(gedt: GeDT) -> tuple[list[int], np.ndarray]:
    """Circuit leaf ids and the product of sum weights on their root paths."""
    c = gedt.circuit
    mass = np.zeros(len(c.nodes))
    mass[c.root] = 1.0
    for i in reversed(c.reachable()):
        node = c.nodes[i]
        if isinstance(node, SumNode):
            for ch, w in zip(node.children, node.weights):
                mass[ch] += mass[i] * w
        elif hasattr(node, "children"):
            for ch in node.children:
                mass[ch] += mass[i]
    leaves = [i for i in c.reachable() if isinstance(c.nodes[i], LeafNode)]
    return leaves, mass[leaves]


def sample_gedt(gedt: GeDT, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral sampling from a tree circuit whose leaves offer ``sample``."""
    rng = np.random.default_rng(rng)
    leaves, mass = leaf_masses(gedt)
    pick = rng.choice(len(leaves), size=n, p=mass / mass.sum())
    m = gedt.circuit.n_vars - 1
    X, y = np.empty((n, m)), np.empty(n, dtype=np.int64)
    for li in np.unique(pick):
        idx = np.flatnonzero(pick == li)
        X[idx], y[idx] = gedt.circuit.nodes[leaves[li]].density.sample(idx.size, rng)
    return X, y


def gedt_log_joint(gedt: GeDT, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    values, miss = make_query(X, None, y, gedt.circuit.n_vars)
    return log_eval(gedt.circuit, values, miss)


def l1_distance(gedt: GeDT, target: GaussianMixture, n_samples: int, rng) -> float:
    """Σ_y ∫ |p - p*| by importance sampling from (p + p*) / 2."""
    rng = np.random.default_rng(rng)
    from_model = rng.random(n_samples) < 0.5
    k = int(from_model.sum())
    Xa, ya = sample_gedt(gedt, k, rng)
    Xb, yb = target.sample(n_samples - k, rng)
    X, y = np.vstack([Xa, Xb]), np.concatenate([ya, yb])
    p = np.exp(gedt_log_joint(gedt, X, y))
    q = np.exp(target.log_joint(X)[np.arange(y.size), y])
    return float(np.mean(np.abs(p - q) / (0.5 * p + 0.5 * q)))


PATTERNS = {"x1,x2": (0, 1), "x1": (0,), "x2": (1,), "none": ()}


def consistency_tree(train: Dataset, seed) -> GeDT:
    """Uniform-leaf tree whose cells shrink while their sample counts grow."""
    params = ForestParams(n_trees=1, max_features="all", min_leaf=max(1, int(np.ceil(np.sqrt(train.n)))),
                          split_pure=True, bootstrap=False)
    tree = learn_tree(train, params, rng=seed)
    return dt_to_gedt(tree, train, uniform_fitter(*bounding_box(train)))


def run_consistency_experiment(cfg: ConsistencyConfig, target: GaussianMixture | None = None) -> list[dict]:
    target = target or default_mixture()
    risks = {name: target.bayes_risk(dims) for name, dims in PATTERNS.items()}
    rows = []
    for n in cfg.sizes:
        l1s, errs = [], {name: [] for name in PATTERNS}
        for s in range(cfg.seeds):
            rng = np.random.default_rng([cfg.seed, n, s])
            train = target.dataset(n, rng)
            gedt = consistency_tree(train, rng)
            l1s.append(l1_distance(gedt, target, cfg.mc_samples, rng))
            Xt, yt = target.sample(cfg.test_samples, rng)
            for name, dims in PATTERNS.items():
                miss = np.ones_like(Xt, dtype=bool)
                miss[:, list(dims)] = False
                errs[name].append(1.0 - accuracy(predict_gedt(gedt, Xt, miss).labels, yt))
        row = {"n": n, "l1": float(np.mean(l1s))}
        for name in PATTERNS:
            row[f"err[{name}]"] = float(np.mean(errs[name]))
            row[f"bayes[{name}]"] = risks[name]
        rows.append(row)
    if cfg.out:
        write_table(rows, Path(cfg.out) / "consistency.tsv")
    return rows


# ---------------------------------------------------------------- imputation counterexample


def run_knn_counterexample(cfg: CounterexampleConfig) -> list[dict]:
    """Accuracy with X2 unobserved: forest + KNN imputation vs the generative forest."""
    rows = []
    for factor in cfg.eps_factors:
        prob = BandProblem(cfg.rho, factor * float(np.sqrt(1.0 - cfg.rho ** 2)))
        knn_acc, gef_acc = [], []
        for s in range(cfg.seeds):
            rng = np.random.default_rng([cfg.seed, int(round(factor * 1e6)), s])
            train = prob.dataset(cfg.n_train, rng)
            test = prob.dataset(cfg.n_test, rng)
            forest = learn_forest(train, ForestParams(n_trees=cfg.n_trees), seed=[cfg.seed, s])
            miss = np.zeros_like(test.X, dtype=bool)
            miss[:, 1] = True
            imputed = KNNImputer.fit(train, k=cfg.knn_k).impute(test.X, miss)
            knn_acc.append(accuracy(np.argmax(predict_forest(forest, imputed), axis=1), test.y))
            gef = rf_to_gef(forest, train)
            gef_acc.append(accuracy(predict_gef(gef, test.X, miss).labels, test.y))
        rows.append({"eps_factor": factor, "eps": prob.eps, "bayes": prob.bayes_accuracy_x1_only(),
                     "knn": float(np.mean(knn_acc)), "gef": float(np.mean(gef_acc)),
                     "gap": float(np.mean(gef_acc) - np.mean(knn_acc))})
    if cfg.out:
        write_table(rows, Path(cfg.out) / "knn_counterexample.tsv")
    return rows


# ---------------------------------------------------------------- outliers


def run_outlier_experiment(cfg: OutlierConfig) -> dict:
    """Score in-distribution and mean-shifted rows by log p(x) under the mixture of trees."""
    rng = np.random.default_rng(cfg.seed)
    if cfg.dataset:
        d = load_dataset(cfg.dataset)
        perm = rng.permutation(d.n)
        cut = d.n // 2
        train, (test,), _ = standardize(d.take(perm[:cut]), [d.take(perm[cut:])])
        cont = ~train.schema.is_categorical
        shifted_X = np.array(test.X)
        shifted_X[:, cont] += cfg.shift
        shifted = test.replace(X=shifted_X)
    else:
        train = gaussian_blobs(cfg.n_train, cfg.dim, rng=rng)
        test = gaussian_blobs(cfg.n_test, cfg.dim, rng=rng)
        shifted = gaussian_blobs(cfg.n_test, cfg.dim, shift=cfg.shift, rng=rng)
    forest = learn_forest(train, ForestParams(n_trees=cfg.n_trees), seed=cfg.seed)
    plus = rf_to_gef(forest, train, leaf_fitter(cfg.leaf, train), "gefplus", cfg.leaf)
    s_in = outlier_score(plus, test.X)
    s_out = outlier_score(plus, shifted.X)
    auc = auc_roc(s_in, s_out)
    result = {"auc": auc, "mean_in": float(np.mean(s_in[np.isfinite(s_in)])),
              "mean_out": float(np.mean(s_out[np.isfinite(s_out)])), "scores_in": s_in, "scores_out": s_out}
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        emit_histograms({"in_distribution": s_in, "shifted": s_out}, cfg.bins, out / "outlier_histograms.tsv")
        write_table([{"auc": auc, "mean_in": result["mean_in"], "mean_out": result["mean_out"]}],
                    out / "outlier.tsv")
    return result
