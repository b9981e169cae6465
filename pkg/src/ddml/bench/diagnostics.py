"""Residual-dependence and latent-probe summaries across seeds."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .experiment import SCHEMA_VERSION, execute

__all__ = ["DiagnosticsReport", "run_diagnostics", "write_diagnostics"]

BLOCKS = ("z_t", "z_y", "z_c")
TARGETS = ("T", "Y*")


@dataclass
class DiagnosticsReport:
    residual_corr: dict   # (dataset, method) -> list of |Corr| per seed
    probe_grid: dict      # (dataset, method) -> 3x2 array, rows BLOCKS, cols TARGETS
    probe_runs: dict      # (dataset, method) -> list of per-seed grids
    records: list

    def mean_residual_corr(self, dataset, method) -> float:
        return float(np.mean(self.residual_corr[(dataset, method)]))


def run_diagnostics(cfg, workers: int | None = None) -> DiagnosticsReport:
    """Run every configured method and collect residual correlations and,
    for encoder-based methods, linear-probe grids."""
    records = execute(cfg, probes=True, workers=workers)
    corr, runs = {}, {}
    for r in records:
        key = (r["dataset"], r["method"])
        if r["error"] is not None:
            continue
        corr.setdefault(key, []).append(r["residual_corr"])
        if "probes" in r:
            grid = np.array([[r["probes"][b][t] for t in TARGETS] for b in BLOCKS])
            runs.setdefault(key, []).append(grid)
    grids = {key: np.mean(g, axis=0) for key, g in runs.items()}
    return DiagnosticsReport(corr, grids, runs, records)


def write_diagnostics(report: DiagnosticsReport, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corr_path = out / "residual_corr.csv"
    with corr_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["schema_version", "dataset", "method", "replication", "seed", "residual_corr"])
        for r in report.records:
            if r["error"] is None:
                w.writerow([SCHEMA_VERSION, r["dataset"], r["method"], r["replication"], r["seed"],
                            repr(r["residual_corr"])])
    probe_path = out / "probe_grid.csv"
    with probe_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["schema_version", "dataset", "method", "block", "target", "mean_score"])
        for (ds, method), grid in report.probe_grid.items():
            for i, b in enumerate(BLOCKS):
                for j, t in enumerate(TARGETS):
                    w.writerow([SCHEMA_VERSION, ds, method, b, t, repr(float(grid[i, j]))])
    return corr_path, probe_path
