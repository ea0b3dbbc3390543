"""Missing-data benchmark: accuracy of every method under test-time MCAR.

    python3 scripts/run_missing.py --out results/missing
    python3 scripts/run_missing.py --config my.json --repeats 2
"""
from __future__ import annotations

import argparse
import logging
from dataclasses import replace

from genforest.bench import ExperimentConfig, run_missing_benchmark


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", help="JSON file with ExperimentConfig fields")
    ap.add_argument("--datasets", nargs="+")
    ap.add_argument("--methods", nargs="+")
    ap.add_argument("--rates", nargs="+", type=float)
    ap.add_argument("--trees", type=int)
    ap.add_argument("--repeats", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", default="results/missing")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    given = {"datasets": args.datasets, "methods": args.methods, "rates": args.rates, "n_trees": args.trees,
             "repeats": args.repeats, "seed": args.seed, "out": args.out}
    cfg = replace(cfg, **{k: tuple(v) if isinstance(v, list) else v for k, v in given.items() if v is not None})
    report = run_missing_benchmark(cfg, progress=True)
    print(report.to_tsv(), end="")


if __name__ == "__main__":
    main()
