"""Consistency trend of single uniform-leaf trees on the Gaussian mixture.

Prints the l1 distance to the true joint and the error of each
missingness-pattern predictor next to its Bayes risk, per training size.
"""
from __future__ import annotations

import argparse
from dataclasses import replace

from genforest.bench import ConsistencyConfig, run_consistency_experiment


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--sizes", nargs="+", type=int)
    ap.add_argument("--seeds", type=int)
    ap.add_argument("--out", default="results/consistency")
    args = ap.parse_args(argv)
    cfg = ConsistencyConfig.from_json(args.config) if args.config else ConsistencyConfig()
    if args.sizes:
        cfg = replace(cfg, sizes=tuple(args.sizes))
    if args.seeds:
        cfg = replace(cfg, seeds=args.seeds)
    rows = run_consistency_experiment(replace(cfg, out=args.out))
    cols = list(rows[0])
    print("\t".join(cols))
    for r in rows:
        print("\t".join(f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in cols))


if __name__ == "__main__":
    main()
