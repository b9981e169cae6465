"""Disentangled double machine learning for average treatment effects.

Classic cross-fitted DML and the disentangled variant share one estimator
pipeline.  The variant first learns three latent blocks (confounding,
treatment-specific, outcome-specific) with an independence penalty and a
residual-decorrelation penalty, then fits each nuisance on its own blocks.

Set ``DDML_BACKEND=numpy`` before import to run the tree and distance
kernels without numba.
"""
from ._backend import BACKEND, HAVE_NUMBA
from .crossfit import (EstimationReport, FoldPlan, estimate_ddml, estimate_dml, linear_probe,
                       make_folds, orthogonality_probe, residual_correlation, residual_regression)
from .errors import DDMLError, InputError, NumericError, ShapeError, StateError
from .hsic import KernelSpec, gram_matrix, hsic_value
from .numcore import TrainConfig, make_rng
from .nuisance import NuisanceSpec, fit_nuisance, predict_nuisance
from .synthgen import Dataset, DgpConfig, generate, load_csv, write_csv
from .trainer import AblationFlags, LossWeights

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "HAVE_NUMBA",
    "AblationFlags",
    "Dataset",
    "DgpConfig",
    "DDMLError",
    "EstimationReport",
    "FoldPlan",
    "InputError",
    "KernelSpec",
    "LossWeights",
    "NumericError",
    "NuisanceSpec",
    "ShapeError",
    "StateError",
    "TrainConfig",
    "estimate_ddml",
    "estimate_dml",
    "fit_nuisance",
    "generate",
    "gram_matrix",
    "hsic_value",
    "linear_probe",
    "load_csv",
    "make_folds",
    "make_rng",
    "orthogonality_probe",
    "predict_nuisance",
    "residual_correlation",
    "residual_regression",
    "write_csv",
]
