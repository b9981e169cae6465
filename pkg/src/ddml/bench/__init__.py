"""Benchmark harness: experiment configs, result tables, rank statistics and the CLI."""
from .diagnostics import DiagnosticsReport, run_diagnostics, write_diagnostics
from .experiment import (SCHEMA_VERSION, DatasetSpec, ExperimentConfig, MethodSpec, ResultTable,
                         load_config, read_replications, run_experiment)
from .features import FeatureEffect, rank_features
from .stats import error_metrics, friedman_ranks, nemenyi_cd

__all__ = [
    "SCHEMA_VERSION",
    "DatasetSpec",
    "ExperimentConfig",
    "MethodSpec",
    "ResultTable",
    "load_config",
    "read_replications",
    "run_experiment",
    "run_diagnostics",
    "write_diagnostics",
    "DiagnosticsReport",
    "rank_features",
    "FeatureEffect",
    "error_metrics",
    "friedman_ranks",
    "nemenyi_cd",
]
