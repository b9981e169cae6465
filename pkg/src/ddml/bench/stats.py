"""Error metrics and rank-based comparison of several methods over several tasks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..errors import InputError

__all__ = ["error_metrics", "nemenyi_cd", "friedman_ranks", "FriedmanResult", "Q_ALPHA_005"]

# Studentized range quantiles at alpha = 0.05, infinite degrees of freedom,
# divided by sqrt(2); keyed by the number of compared methods.
Q_ALPHA_005 = {2: 1.960, 3: 2.343, 4: 2.569, 5: 2.728, 6: 2.850,
               7: 2.949, 8: 3.031, 9: 3.102, 10: 3.164}
_Q_TABLES = {0.05: Q_ALPHA_005}


def error_metrics(estimates, truths) -> dict:
    """MAE, RMSE and the spread of absolute errors for one result cell."""
    est = np.asarray(estimates, dtype=np.float64).ravel()
    tru = np.broadcast_to(np.asarray(truths, dtype=np.float64), est.shape)
    if est.size == 0:
        return {"mae": math.nan, "rmse": math.nan, "std": math.nan}
    err = est - tru
    abs_err = np.abs(err)
    return {
        "mae": float(np.mean(abs_err)),
        "rmse": float(np.sqrt(np.mean(err * err))),
        "std": float(np.std(abs_err)),
    }


def nemenyi_cd(num_methods: int, num_tasks: int, alpha: float = 0.05) -> float:
    """Critical difference in average rank for the Nemenyi post-hoc test."""
    if alpha not in _Q_TABLES:
        raise InputError(f"no q table for alpha={alpha}; supported: {sorted(_Q_TABLES)}")
    table = _Q_TABLES[alpha]
    if num_methods not in table:
        raise InputError(f"number of methods must be in {min(table)}..{max(table)}, got {num_methods}")
    if num_tasks < 1:
        raise InputError("number of tasks must be >= 1")
    k = num_methods
    return table[k] * math.sqrt(k * (k + 1) / (6.0 * num_tasks))


@dataclass
class FriedmanResult:
    ranks: np.ndarray        # (methods, tasks), 1 = best, ties averaged
    mean_ranks: np.ndarray   # (methods,)
    statistic: float         # chi^2_F without tie correction
    p_value: float


def friedman_ranks(scores, higher_is_better: bool = False) -> FriedmanResult:
    """Rank methods within each task and compute the Friedman statistic.

    Parameters
    ----------
    scores : array_like, shape (methods, tasks)
        One score per method and task, e.g. an error metric.
    higher_is_better : bool
        Rank the largest score first instead of the smallest.
    """
    table = np.asarray(scores, dtype=np.float64)
    if table.ndim != 2:
        raise InputError("score table must be 2-D (methods x tasks)")
    k, n_tasks = table.shape
    if k < 2 or n_tasks < 2:
        raise InputError("need at least 2 methods and 2 tasks")
    if not np.all(np.isfinite(table)):
        bad = np.argwhere(~np.isfinite(table))[0]
        raise InputError(f"missing or non-finite score for method {bad[0]}, task {bad[1]}")
    oriented = -table if higher_is_better else table
    ranks = np.apply_along_axis(stats.rankdata, 0, oriented)
    mean_ranks = ranks.mean(axis=1)
    chi2 = 12.0 * n_tasks / (k * (k + 1)) * (np.sum(mean_ranks ** 2) - k * (k + 1) ** 2 / 4.0)
    p = float(stats.chi2.sf(chi2, k - 1))
    return FriedmanResult(ranks, mean_ranks, float(chi2), p)
