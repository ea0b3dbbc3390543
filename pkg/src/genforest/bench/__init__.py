"""Experiment harness: configs, runners, metrics and model files."""
from .config import (
    METHODS,
    ConsistencyConfig,
    CounterexampleConfig,
    ExperimentConfig,
    OutlierConfig,
    bundled_datasets,
    load_dataset,
)
from .experiments import (
    ExperimentReport,
    run_consistency_experiment,
    run_knn_counterexample,
    run_missing_benchmark,
    run_outlier_experiment,
)
from .metrics import auc_pairs, auc_roc, emit_histograms, mean_halfwidth
from .serialize import Corrupted, UnsupportedVersion, load_model, save_model
