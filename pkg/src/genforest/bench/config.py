"""Experiment configurations and bundled dataset lookup."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from ..data import Dataset, load_csv, load_schema

DATA_DIR = Path(__file__).resolve().parents[1] / "datasets"

METHODS = ("rf", "surrogate", "friedman", "mean", "knn", "gef", "gefplus", "gef_lspn")


def bundled_datasets() -> list[str]:
    return sorted(p.name[: -len(".schema.json")] for p in DATA_DIR.glob("*.schema.json"))


def dataset_paths(name_or_path: str, schema: str | None = None) -> tuple[Path, Path]:
    """Resolve a bundled dataset name or a CSV path (schema defaults to ``<stem>.schema.json``)."""
    p = Path(name_or_path)
    if not p.suffix and (DATA_DIR / f"{name_or_path}.csv").exists():
        return DATA_DIR / f"{name_or_path}.csv", DATA_DIR / f"{name_or_path}.schema.json"
    s = Path(schema) if schema else p.with_name(p.stem + ".schema.json")
    return p, s


def load_dataset(name_or_path: str, schema: str | None = None) -> Dataset:
    csv_path, schema_path = dataset_paths(name_or_path, schema)
    return load_csv(csv_path, load_schema(schema_path))


class ConfigMixin:
    @classmethod
    def from_dict(cls, d: dict):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**kw)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ExperimentConfig(ConfigMixin):
    """Cross-validated accuracy under test-time MCAR missingness."""

    datasets: tuple[str, ...] = ("breast_cancer", "wine", "iris", "mixed")
    schemas: tuple[str | None, ...] = ()
    methods: tuple[str, ...] = ("rf", "surrogate", "friedman", "mean", "knn", "gef", "gefplus")
    rates: tuple[float, ...] = (0.0, 0.1, 0.3, 0.5)
    n_trees: int = 100
    min_samples: int = 1
    leaf: str = "factorized"
    folds: int = 5
    repeats: int = 10
    seed: int = 0
    knn_k: int = 7
    out: str | None = None

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        if any(not 0.0 <= r < 1.0 for r in self.rates):
            raise ValueError("missingness rates must lie in [0, 1)")
        if self.schemas and len(self.schemas) != len(self.datasets):
            raise ValueError("give one schema per dataset or none")
        if self.n_trees < 1 or self.folds < 2 or self.repeats < 1 or self.knn_k < 1:
            raise ValueError("n_trees, repeats, knn_k must be >= 1 and folds >= 2")


@dataclass(frozen=True)
class ConsistencyConfig(ConfigMixin):
    """Single uniform-leaf trees on a two-class Gaussian mixture of growing size."""

    sizes: tuple[int, ...] = (100, 1000, 10000, 100000)
    seeds: int = 3
    mc_samples: int = 100000
    test_samples: int = 20000
    seed: int = 0
    out: str | None = None


@dataclass(frozen=True)
class CounterexampleConfig(ConfigMixin):
    """X2 always missing; the label marks a band around E[X2 | x1]."""

    eps_factors: tuple[float, ...] = (0.5, 0.2, 0.05)
    rho: float = 0.5
    n_train: int = 50000
    n_test: int = 2000
    n_trees: int = 10
    knn_k: int = 2500  # large k, small k/n: the imputation approaches E[X2 | x1]
    seeds: int = 3
    seed: int = 0
    out: str | None = None


@dataclass(frozen=True)
class OutlierConfig(ConfigMixin):
    """Log-density of in-distribution vs mean-shifted samples under the mixture model."""

    n_train: int = 1000
    n_test: int = 500
    dim: int = 5
    shift: float = 2.0
    n_trees: int = 30
    leaf: str = "factorized"
    bins: int = 40
    seed: int = 0
    dataset: str | None = None  # bundled dataset instead of synthetic blobs
    out: str | None = None
