"""Rank covariates by the effect each one has on the outcome when treated as
the treatment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..synthgen import BINARY, CONTINUOUS, Dataset

__all__ = ["FeatureEffect", "rank_features"]


@dataclass
class FeatureEffect:
    column: str
    index: int
    theta_hat: float
    kind: str
    flag: str | None = None


def rank_features(data: Dataset, method, cfg, seed: int = 0) -> list:
    """Estimate an effect per covariate and sort by its magnitude.

    Column ``j`` becomes the treatment (binary iff its values are all 0 or
    1) and the remaining columns the covariates.  Constant columns get
    effect 0 with ``flag="constant"``.  Ties keep column order.

    Parameters
    ----------
    data : Dataset
    method : MethodSpec
    cfg : ExperimentConfig
        Supplies folds, loss weights and training settings.
    seed : int
    """
    from .experiment import run_method

    effects = []
    for j, name in enumerate(data.columns):
        col = data.x[:, j]
        kind = BINARY if np.all((col == 0.0) | (col == 1.0)) else CONTINUOUS
        if np.all(col == col[0]):
            effects.append(FeatureEffect(name, j, 0.0, kind, "constant"))
            continue
        rest = np.delete(data.x, j, axis=1)
        if rest.shape[1] == 0:
            rest = np.zeros((data.n, 1))
        sub = Dataset(rest, col, data.y, kind, None, f"{data.name}:{name}",
                      [c for i, c in enumerate(data.columns) if i != j] or ["const"])
        report = run_method(sub, method, cfg, seed)
        effects.append(FeatureEffect(name, j, float(report.theta_hat), kind))
    order = sorted(range(len(effects)), key=lambda i: (-abs(effects[i].theta_hat), effects[i].index))
    return [effects[i] for i in order]
