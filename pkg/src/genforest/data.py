"""Tabular datasets with mixed categorical / continuous features.

Missing cells are tracked with a boolean mask next to the value matrix, so a
masked cell may still hold its original value (useful for oracles), but no
consumer is allowed to read it.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"
CLASS = "class"
KINDS = (CATEGORICAL, CONTINUOUS, CLASS)

SIGMA_FLOOR = 1e-12


class DataError(ValueError):
    """Base class for dataset / schema problems."""


class SchemaError(DataError):
    pass


class EmptyDataset(DataError):
    pass


class UnknownCategory(DataError):
    def __init__(self, row: int, col: str, value: str):
        super().__init__(f"row {row}, column {col!r}: unknown category {value!r}")
        self.row, self.col, self.value = row, col, value


class ArityMismatch(DataError):
    def __init__(self, row: int, expected: int, got: int):
        super().__init__(f"row {row}: expected {expected} cells, got {got}")
        self.row, self.expected, self.got = row, expected, got


class ParseError(DataError):
    def __init__(self, row: int, col: str, value: str):
        super().__init__(f"row {row}, column {col!r}: cannot parse {value!r} as a number")
        self.row, self.col, self.value = row, col, value


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
        if self.kind == CONTINUOUS and self.categories:
            raise SchemaError(f"continuous column {self.name!r} cannot declare categories")
        if self.kind != CONTINUOUS:
            if len(self.categories) < 2:
                raise SchemaError(f"column {self.name!r} needs at least 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"column {self.name!r} has duplicate categories")

    @property
    def cardinality(self) -> int:
        return len(self.categories)


@dataclass(frozen=True)
class Schema:
    """Ordered column descriptors; exactly one column has kind ``class``."""

    columns: tuple[Column, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        n_class = sum(c.kind == CLASS for c in self.columns)
        if n_class != 1:
            raise SchemaError(f"expected exactly one class column, found {n_class}")

    @classmethod
    def build(cls, features: Sequence[Column], target: Column) -> "Schema":
        return cls(tuple(features) + (target,))

    @property
    def features(self) -> tuple[Column, ...]:
        return tuple(c for c in self.columns if c.kind != CLASS)

    @property
    def target(self) -> Column:
        return next(c for c in self.columns if c.kind == CLASS)

    @property
    def n_features(self) -> int:
        return len(self.columns) - 1

    @property
    def n_classes(self) -> int:
        return self.target.cardinality

    @property
    def is_categorical(self) -> np.ndarray:
        return np.array([c.kind == CATEGORICAL for c in self.features], dtype=bool)

    @property
    def cardinalities(self) -> np.ndarray:
        """K_i per feature, 0 for continuous features."""
        return np.array([c.cardinality for c in self.features], dtype=np.int64)

    def to_dict(self) -> dict:
        out = []
        for c in self.columns:
            entry = {"name": c.name, "kind": c.kind}
            if c.kind != CONTINUOUS:
                entry["categories"] = list(c.categories)
            out.append(entry)
        return {"columns": out}

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        try:
            cols = [Column(e["name"], e["kind"], tuple(e.get("categories", ()))) for e in d["columns"]]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc
        return cls(tuple(cols))


def load_schema(path: str | Path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return Schema.from_dict(json.load(fh))


def save_schema(schema: Schema, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable feature matrix + labels + missingness mask.

    ``X`` has shape (n, m) and stores category indices as floats for
    categorical features.  ``missing[i, j]`` marks cell (i, j) as unobserved.
    """

    schema: Schema
    X: np.ndarray
    y: np.ndarray
    missing: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != self.schema.n_features:
            raise DataError(f"X must have shape (n, {self.schema.n_features}), got {X.shape}")
        if X.shape[0] < 1:
            raise EmptyDataset("dataset has no rows")
        if y.shape != (X.shape[0],):
            raise DataError("y must be a vector with one label per row")
        missing = np.zeros(X.shape, dtype=bool) if self.missing is None else np.asarray(self.missing, dtype=bool)
        if missing.shape != X.shape:
            raise DataError("missing mask must match X")
        if np.any((y < 0) | (y >= self.schema.n_classes)):
            raise DataError("class labels out of range")
        observed = ~missing
        card = self.schema.cardinalities
        cat = self.schema.is_categorical
        if cat.any():
            vals = X[:, cat]
            obs = observed[:, cat]
            bad = obs & ((vals < 0) | (vals >= card[cat]) | (vals != np.floor(vals)))
            if bad.any():
                raise DataError("category index out of range")
        if (~cat).any() and np.isnan(X[:, ~cat][observed[:, ~cat]]).any():
            raise DataError("NaN in an observed continuous cell")
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "missing", _readonly(missing))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    @property
    def complete(self) -> bool:
        return not self.missing.any()

    def take(self, rows: np.ndarray | Sequence[int]) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.schema, self.X[rows], self.y[rows], self.missing[rows])

    def replace(self, X=None, y=None, missing=None) -> "Dataset":
        return Dataset(
            self.schema,
            self.X if X is None else X,
            self.y if y is None else y,
            self.missing if missing is None else missing,
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.schema.n_classes)


@dataclass(frozen=True, eq=False)
class PartialInstance:
    """One query: feature values plus a mask of unobserved features."""

    values: np.ndarray
    missing: np.ndarray

    @classmethod
    def from_mapping(cls, schema: Schema, observed: dict) -> "PartialInstance":
        """Build a query from ``{feature name: value}``; absent names are missing.

        Categorical values may be given as category labels or indices.
        """
        feats = schema.features
        values = np.zeros(len(feats))
        missing = np.ones(len(feats), dtype=bool)
        for j, col in enumerate(feats):
            if col.name not in observed:
                continue
            v = observed[col.name]
            if col.kind == CATEGORICAL:
                if isinstance(v, str):
                    if v not in col.categories:
                        raise UnknownCategory(0, col.name, v)
                    v = col.categories.index(v)
                if not 0 <= int(v) < col.cardinality:
                    raise DataError(f"{col.name}: category index {v} out of range")
            values[j] = float(v)
            missing[j] = False
        return cls(values, missing)


# ---------------------------------------------------------------- CSV ingestion


def load_csv(path: str | Path, schema: Schema) -> Dataset:
    """Read a comma-separated file whose header matches ``schema`` column names.

    Empty feature cells are treated as missing.  Rows are numbered from 1
    (the first data row) in error messages.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path}: no header row") from None
        names = [c.name for c in schema.columns]
        if [h.strip() for h in header] != names:
            raise SchemaError(f"{path}: header {header} does not match schema {names}")
        rows = [r for r in reader if r and any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyDataset(f"{path}: empty data section")
    return _parse_rows(rows, schema)


def _parse_rows(rows: list[list[str]], schema: Schema) -> Dataset:
    n, width = len(rows), len(schema.columns)
    m = schema.n_features
    X = np.zeros((n, m))
    y = np.zeros(n, dtype=np.int64)
    missing = np.zeros((n, m), dtype=bool)
    lookup = [{c: k for k, c in enumerate(col.categories)} for col in schema.columns]
    for i, row in enumerate(rows, start=1):
        if len(row) != width:
            raise ArityMismatch(i, width, len(row))
        j = 0
        for col, cats, raw in zip(schema.columns, lookup, row):
            cell = raw.strip()
            if col.kind == CLASS:
                if cell not in cats:
                    raise UnknownCategory(i, col.name, cell)
                y[i - 1] = cats[cell]
                continue
            if cell == "":
                missing[i - 1, j] = True
            elif col.kind == CATEGORICAL:
                if cell not in cats:
                    raise UnknownCategory(i, col.name, cell)
                X[i - 1, j] = cats[cell]
            else:
                try:
                    X[i - 1, j] = float(cell)
                except ValueError:
                    raise ParseError(i, col.name, cell) from None
                if not math.isfinite(X[i - 1, j]):
                    raise ParseError(i, col.name, cell)
            j += 1
    return Dataset(schema, X, y, missing)


def save_csv(d: Dataset, path: str | Path) -> None:
    feats = d.schema.features
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([c.name for c in d.schema.columns])
        for i in range(d.n):
            cells = iter(range(d.m))
            row = []
            for col in d.schema.columns:
                if col.kind == CLASS:
                    row.append(col.categories[d.y[i]])
                    continue
                j = next(cells)
                if d.missing[i, j]:
                    row.append("")
                elif col.kind == CATEGORICAL:
                    row.append(feats[j].categories[int(d.X[i, j])])
                else:
                    row.append(repr(float(d.X[i, j])))
            w.writerow(row)


# ---------------------------------------------------------------- preprocessing


@dataclass(frozen=True)
class PerColumnStats:
    """Train-fold mean / std for continuous features (NaN for categorical)."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, d: Dataset) -> Dataset:
        X = np.array(d.X)
        cont = ~np.isnan(self.mean)
        X[:, cont] = (X[:, cont] - self.mean[cont]) / self.std[cont]
        return d.replace(X=X)


def fit_stats(train: Dataset) -> PerColumnStats:
    m = train.m
    mean = np.full(m, np.nan)
    std = np.full(m, np.nan)
    for j in np.flatnonzero(~train.schema.is_categorical):
        col = train.X[~train.missing[:, j], j]
        if col.size == 0:
            mean[j], std[j] = 0.0, 1.0
            continue
        mean[j] = col.mean()
        std[j] = max(col.std(), SIGMA_FLOOR)
    return PerColumnStats(mean, std)


def standardize(train: Dataset, others: Iterable[Dataset] = ()) -> tuple[Dataset, list[Dataset], PerColumnStats]:
    """Z-score continuous columns with statistics from ``train`` only."""
    stats = fit_stats(train)
    return stats.apply(train), [stats.apply(o) for o in others], stats


# ---------------------------------------------------------------- randomness


def inject_mcar(d: Dataset, rate: float, seed) -> Dataset:
    """Mask every feature cell independently with probability ``rate``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"missingness rate must lie in [0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    mask = rng.random(d.X.shape) < rate
    return d.replace(missing=d.missing | mask)


def kfold(d: Dataset | int, k: int, repeats: int = 1, seed=0) -> np.ndarray:
    """Fold index per row, shape (repeats, n).

    Folds differ in size by at most one; the first ``n % k`` folds get the
    extra rows.
    """
    n = d if isinstance(d, (int, np.integer)) else d.n
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise ValueError(f"cannot split {n} rows into {k} folds")
    rng = np.random.default_rng(seed)
    out = np.empty((repeats, n), dtype=np.int64)
    for r in range(repeats):
        perm = rng.permutation(n)
        out[r, perm] = np.arange(n) % k
    return out


def bootstrap_indices(n: int, seed) -> np.ndarray:
    if n < 1:
        raise EmptyDataset("cannot resample an empty dataset")
    return np.random.default_rng(seed).integers(0, n, size=n)


def bootstrap(d: Dataset, seed) -> Dataset:
    return d.take(bootstrap_indices(d.n, seed))
