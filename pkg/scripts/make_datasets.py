"""Write the bundled CSV datasets and their schemas.

Public tables come from scikit-learn's built-in copies (no network).  The
mixed-type table is synthetic: correlated latent factors drive both the
continuous and the discretised columns, so unobserved features are
predictable from observed ones.
"""
from __future__ import annotations

import argparse
import re
from pathlib import Path

import numpy as np
from sklearn import datasets as skd

from genforest.data import CATEGORICAL, CLASS, CONTINUOUS, Column, Dataset, Schema, save_csv, save_schema

OUT = Path(__file__).resolve().parents[1] / "src" / "genforest" / "datasets"


def _slug(name: str) -> str:
    return re.sub(r"[^0-9a-z]+", "_", name.strip().lower()).strip("_")


def from_sklearn(loader, name: str) -> Dataset:
    b = loader()
    feats = [Column(_slug(f), CONTINUOUS) for f in b.feature_names]
    target = Column("class", CLASS, tuple(_slug(str(t)) for t in b.target_names))
    return Dataset(Schema.build(feats, target), b.data.astype(np.float64), b.target.astype(np.int64))


def mixed(n: int = 800, seed: int = 7) -> Dataset:
    rng = np.random.default_rng(seed)
    y = rng.choice(3, size=n, p=[0.4, 0.35, 0.25])
    centers = np.array([[0.0, 0.0, 0.0], [1.2, -0.8, 0.5], [-0.6, 1.0, 1.2]])
    mix = np.array([[1.0, 0.6, 0.0], [0.0, 1.0, 0.7], [0.5, 0.0, 1.0]])
    z = centers[y] + rng.normal(size=(n, 3)) @ mix
    cont = np.column_stack([
        z[:, 0] + 0.3 * rng.normal(size=n),
        z[:, 1] - 0.5 * z[:, 0] + 0.3 * rng.normal(size=n),
        z[:, 2] + 0.4 * rng.normal(size=n),
        z.sum(axis=1) + 0.5 * rng.normal(size=n),
    ])
    cat = np.column_stack([
        np.digitize(z[:, 0] + 0.4 * rng.normal(size=n), [-0.5, 0.5, 1.5]),
        np.digitize(z[:, 1] + 0.4 * rng.normal(size=n), [0.3]),
        np.digitize(z[:, 2] - z[:, 1] + 0.4 * rng.normal(size=n), [-1.0, 0.0, 1.0, 2.0]),
    ])
    feats = [Column(f"c{j + 1}", CONTINUOUS) for j in range(cont.shape[1])]
    feats += [Column(f"d{j + 1}", CATEGORICAL, tuple(f"s{k}" for k in range(int(cat[:, j].max()) + 1)))
              for j in range(cat.shape[1])]
    schema = Schema.build(feats, Column("class", CLASS, ("a", "b", "c")))
    return Dataset(schema, np.hstack([cont, cat]).astype(np.float64), y)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    tables = {
        "breast_cancer": from_sklearn(skd.load_breast_cancer, "breast_cancer"),
        "wine": from_sklearn(skd.load_wine, "wine"),
        "iris": from_sklearn(skd.load_iris, "iris"),
        "mixed": mixed(),
    }
    for name, d in tables.items():
        save_csv(d, args.out / f"{name}.csv")
        save_schema(d.schema, args.out / f"{name}.schema.json")
        print(f"{name}: {d.n} rows, {d.m} features, {d.schema.n_classes} classes")


if __name__ == "__main__":
    main()
