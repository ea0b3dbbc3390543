"""Random forests read as probabilistic circuits.

Trees and forests learned with Gini splits convert into generative models
over (X, Y) that classify with missing features by marginalisation and
score inputs by their density.
"""
from .circuit import Circuit, check_decomposable, check_deterministic, check_smooth, compile_pullup, evaluate, marginal
from .convert import GeDT, GeF, dt_to_gedt, leaf_fitter, rf_to_gef
from .data import Column, Dataset, PartialInstance, Schema, inject_mcar, kfold, load_csv, load_schema, standardize
from .forest import ForestParams, RandomForest, learn_forest, learn_tree, predict_forest, predict_tree
from .inference import ClassPosterior, outlier_score, predict, predict_gedt, predict_gef, predict_gefplus
from .leaves import fit_class_factorized, fit_learnspn_lite, fit_uniform

__version__ = "0.1.0"
