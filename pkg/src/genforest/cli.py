"""Command line entry point: ``genforest <command> [flags]``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from .bench.config import (
    ConsistencyConfig,
    CounterexampleConfig,
    ExperimentConfig,
    OutlierConfig,
    load_dataset,
)
from .bench.experiments import (
    run_consistency_experiment,
    run_knn_counterexample,
    run_missing_benchmark,
    run_outlier_experiment,
    write_table,
)
from .bench.serialize import load_model, save_model
from .convert import LEAF_TYPES, GeF, leaf_fitter, rf_to_gef
from .forest import ForestParams, RandomForest, learn_forest, predict_forest
from .inference import predict


def _load_config(cls, args, overrides: dict):
    cfg = cls.from_json(args.config) if args.config else cls()
    given = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **given) if given else cfg


def _print_rows(rows: list[dict]):
    if not rows:
        return
    cols = list(rows[0])
    print("\t".join(cols))
    for r in rows:
        print("\t".join(format(r[c], ".6f") if isinstance(r[c], float) else str(r[c]) for c in cols))


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    d = load_dataset(args.data, args.schema)
    params = ForestParams(n_trees=args.trees, min_samples=args.min_samples, surrogates=args.surrogates)
    forest = learn_forest(d, params, seed=args.seed)
    save_model(forest, args.out)
    print(f"trained {forest.n_trees} trees on {d.n} rows -> {args.out}")
    return 0


def cmd_convert(args) -> int:
    forest = load_model(args.model)
    if not isinstance(forest, RandomForest):
        raise SystemExit("convert needs a forest model produced by 'train'")
    d = load_dataset(args.data, args.schema)
    gef = rf_to_gef(forest, d, leaf_fitter(args.leaf, d), args.mode, args.leaf)
    save_model(gef, args.out)
    print(f"converted {gef.n_trees} trees ({args.leaf} leaves, {args.mode}) -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    d = load_dataset(args.data, args.schema)
    if isinstance(model, GeF):
        if args.mode:
            model = model.with_mode(args.mode)
        probs = predict(model, d.X, d.missing).probs
    else:
        if d.missing.any():
            raise SystemExit("a plain forest cannot predict rows with missing cells; convert it first")
        probs = predict_forest(model, d.X)
    names = d.schema.target.categories
    rows = [{"row": i + 1, **{f"p[{n}]": float(p) for n, p in zip(names, pr)}, "label": names[int(np.argmax(pr))]}
            for i, pr in enumerate(probs)]
    if args.out:
        write_table(rows, args.out)
    else:
        _print_rows(rows)
    return 0


def cmd_bench_missing(args) -> int:
    cfg = _load_config(ExperimentConfig, args, {
        "datasets": tuple(args.datasets) if args.datasets else None,
        "methods": tuple(args.methods) if args.methods else None,
        "rates": tuple(args.rate) if args.rate else None,
        "n_trees": args.trees, "seed": args.seed, "leaf": args.leaf, "folds": args.folds,
        "repeats": args.repeats, "min_samples": args.min_samples, "out": args.out,
    })
    report = run_missing_benchmark(cfg, progress=True)
    sys.stdout.write(report.to_tsv())
    return 0


def cmd_bench_outlier(args) -> int:
    cfg = _load_config(OutlierConfig, args, {"n_trees": args.trees, "seed": args.seed, "leaf": args.leaf,
                                             "dataset": args.dataset, "shift": args.shift, "out": args.out})
    res = run_outlier_experiment(cfg)
    _print_rows([{"auc": res["auc"], "mean_in": res["mean_in"], "mean_out": res["mean_out"]}])
    return 0


def cmd_bench_consistency(args) -> int:
    cfg = _load_config(ConsistencyConfig, args, {"sizes": tuple(args.sizes) if args.sizes else None,
                                                 "seed": args.seed, "out": args.out})
    _print_rows(run_consistency_experiment(cfg))
    return 0


def cmd_bench_counterexample(args) -> int:
    cfg = _load_config(CounterexampleConfig, args, {"n_trees": args.trees, "seed": args.seed, "out": args.out})
    _print_rows(run_knn_counterexample(cfg))
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="genforest", description="Generative forests: train, convert, predict, bench.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def data_flags(p, required=True):
        p.add_argument("--data", required=required, help="bundled dataset name or CSV path")
        p.add_argument("--schema", help="schema JSON (default: <csv stem>.schema.json)")

    p = sub.add_parser("train", help="learn a random forest on complete data")
    data_flags(p)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--min-samples", type=int, default=1, help="nodes with fewer rows become leaves")
    p.add_argument("--surrogates", type=int, default=0, help="surrogate splits recorded per node (max 5)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("convert", help="turn a trained forest into a generative forest")
    p.add_argument("--model", required=True)
    data_flags(p)
    p.add_argument("--leaf", choices=LEAF_TYPES, default="factorized")
    p.add_argument("--mode", choices=("gef", "gefplus"), default="gef")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("predict", help="class posteriors for a CSV (empty cells are missing)")
    p.add_argument("--model", required=True)
    data_flags(p)
    p.add_argument("--mode", choices=("gef", "gefplus"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    for name, func, helptext in (
        ("bench-missing", cmd_bench_missing, "cross-validated accuracy under MCAR test features"),
        ("bench-outlier", cmd_bench_outlier, "log-density AUC for shifted samples"),
        ("bench-consistency", cmd_bench_consistency, "l1 distance and pattern errors vs sample size"),
        ("bench-knn-counterexample", cmd_bench_counterexample, "KNN imputation vs marginalisation"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON file with config fields; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory for TSV tables")
        if name in ("bench-missing", "bench-outlier", "bench-knn-counterexample"):
            p.add_argument("--trees", type=int)
        if name in ("bench-missing", "bench-outlier"):
            p.add_argument("--leaf", choices=LEAF_TYPES)
        if name == "bench-missing":
            p.add_argument("--datasets", nargs="+")
            p.add_argument("--methods", nargs="+")
            p.add_argument("--rate", type=float, action="append", help="missingness rate (repeatable)")
            p.add_argument("--folds", type=int)
            p.add_argument("--repeats", type=int)
            p.add_argument("--min-samples", type=int)
        if name == "bench-outlier":
            p.add_argument("--dataset")
            p.add_argument("--shift", type=float)
        if name == "bench-consistency":
            p.add_argument("--sizes", type=int, nargs="+")
        p.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
