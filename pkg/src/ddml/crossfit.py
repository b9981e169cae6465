"""K-fold cross-fitting and residual-on-residual effect estimation.

:func:`estimate_dml` fits the nuisances on raw covariates.
:func:`estimate_ddml` first trains a role-disentangling encoder on each
training fold and fits the treatment nuisance on ``[z_c, z_t]`` and the
outcome nuisance on ``[z_c, z_y]``.  Both finish with
``theta = T_res.Y_res / (T_res.T_res + delta)``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import InputError, NumericError, ShapeError
from .hsic import KernelSpec
from .numcore import TrainConfig, as_matrix, as_vector, make_rng
from .nuisance import BINARY_PROBABILITY, REGRESSION, FittedNuisance, NuisanceSpec, fit_nuisance
from .synthgen import BINARY, Dataset
from .trainer import AblationFlags, FittedRepresentation, LossWeights, RepresentationTriple
from .trainer import fit as fit_representation

__all__ = [
    "FoldPlan",
    "FoldFit",
    "EstimationReport",
    "make_folds",
    "residual_regression",
    "residual_correlation",
    "estimate_dml",
    "estimate_ddml",
    "orthogonality_probe",
    "linear_probe",
    "auc_score",
]


@dataclass
class FoldPlan:
    k: int
    assignment: np.ndarray

    def hold(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


def make_folds(n: int, k: int, rng: np.random.Generator) -> FoldPlan:
    """Random partition of ``range(n)`` into ``k`` folds whose sizes differ by at most one."""
    if not 2 <= k <= n:
        raise InputError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % k
    return FoldPlan(int(k), assignment)


def residual_regression(t_res, y_res, delta: float = 1e-8) -> float:
    t_res = as_vector(t_res, "t_res")
    y_res = as_vector(y_res, "y_res")
    if t_res.shape != y_res.shape:
        raise ShapeError("residual vectors differ in length")
    if t_res.shape[0] < 2:
        raise InputError("need at least 2 residuals")
    return float(t_res @ y_res) / (float(t_res @ t_res) + delta)


def _pearson(a, b, eps):
    ac = a - a.mean()
    bc = b - b.mean()
    return float(ac @ bc) / (float(np.sqrt(ac @ ac)) * float(np.sqrt(bc @ bc)) + eps)


def residual_correlation(t_res, y_res, theta: float, eps: float = 1e-8) -> float:
    """``|Corr(T_res, Y_res - theta * T_res)|``."""
    t_res = as_vector(t_res)
    y_res = as_vector(y_res)
    return abs(_pearson(t_res, y_res - theta * t_res, eps))


@dataclass
class FoldFit:
    fold: int
    train_idx: np.ndarray
    hold_idx: np.ndarray
    m_model: FittedNuisance
    g_model: FittedNuisance
    representation: FittedRepresentation | None = None


@dataclass
class EstimationReport:
    """Effect estimate with residuals, fitted folds and diagnostics."""

    method: str
    theta_hat: float
    t_hat: np.ndarray
    y_hat: np.ndarray
    t_res: np.ndarray
    y_res: np.ndarray
    folds: FoldPlan
    fits: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    wall_time: float = 0.0


def _treatment_task(data: Dataset) -> str:
    return BINARY_PROBABILITY if data.treatment == BINARY else REGRESSION


def _check_hygiene(plan: FoldPlan, fits, n):
    produced = np.full(n, -1, dtype=np.int64)
    for f in fits:
        if np.intersect1d(f.train_idx, f.hold_idx).size:
            raise AssertionError(f"fold {f.fold}: training and held-out rows overlap")
        if np.any(produced[f.hold_idx] >= 0):
            raise AssertionError(f"fold {f.fold}: rows predicted twice")
        produced[f.hold_idx] = f.fold
    if np.any(produced < 0):
        raise AssertionError("some rows never received an out-of-fold prediction")
    if not np.array_equal(produced, plan.assignment):
        raise AssertionError("predictions were produced by the wrong fold model")


def _finish(method, data, plan, fits, t_hat, y_hat, traces, delta, eps, started):
    _check_hygiene(plan, fits, data.n)
    t_res = data.t - t_hat
    y_res = data.y - y_hat
    theta = residual_regression(t_res, y_res, delta)
    if not np.isfinite(theta):
        raise NumericError(f"{method}: non-finite effect estimate")
    report = EstimationReport(method, theta, t_hat, y_hat, t_res, y_res, plan, fits, traces)
    report.diagnostics["residual_corr"] = residual_correlation(t_res, y_res, theta, eps)
    report.wall_time = time.perf_counter() - started
    return report


def _check_data(data: Dataset, k: int):
    if data.n < 2 * k:
        raise InputError(f"need at least 2k={2 * k} rows, got {data.n}")


def estimate_dml(data: Dataset, k: int = 5, spec: NuisanceSpec = NuisanceSpec(), seed: int = 0,
                 delta: float = 1e-8, eps_corr: float = 1e-8) -> EstimationReport:
    """Classic cross-fitted DML: nuisances on raw covariates."""
    _check_data(data, k)
    started = time.perf_counter()
    plan = make_folds(data.n, k, make_rng(seed, "folds"))
    t_spec = spec.with_task(_treatment_task(data))
    y_spec = spec.with_task(REGRESSION)
    t_hat = np.zeros(data.n)
    y_hat = np.zeros(data.n)
    fits = []
    for fold in range(k):
        tr, ho = plan.train(fold), plan.hold(fold)
        try:
            m = fit_nuisance(data.x[tr], data.t[tr], t_spec, make_rng(seed, "fold", fold, "m"))
            g = fit_nuisance(data.x[tr], data.y[tr], y_spec, make_rng(seed, "fold", fold, "g"))
        except Exception as exc:
            raise type(exc)(f"fold {fold}: {exc}") from exc
        t_hat[ho] = m.predict(data.x[ho])
        y_hat[ho] = g.predict(data.x[ho])
        fits.append(FoldFit(fold, tr, ho, m, g))
    return _finish("dml", data, plan, fits, t_hat, y_hat, [], delta, eps_corr, started)


def estimate_ddml(data: Dataset, k: int = 5, spec: NuisanceSpec = NuisanceSpec(),
                  w: LossWeights = LossWeights(), cfg: TrainConfig = TrainConfig(),
                  flags: AblationFlags = AblationFlags(), seed: int = 0,
                  kernel: KernelSpec = KernelSpec(), detach_theta: bool = False,
                  latent_dim: int | None = 8, probes: bool = True, hidden=(32, 32),
                  activation: str = "elu", val_fraction: float = 0.0) -> EstimationReport:
    """Disentangled DML.

    Per fold: train encoder and heads on the training rows, encode training
    and held-out rows, fit the treatment nuisance on ``[z_c, z_t]`` and the
    outcome nuisance on ``[z_c, z_y]``, then predict the held-out rows.

    With ``flags.use_encoder=False`` no representation is trained and the
    nuisances see the raw covariates, which reproduces :func:`estimate_dml`
    exactly for the same seed.  When ``probes`` is set, linear probe scores
    of each latent block on the held-out rows are averaged over folds and
    stored under ``diagnostics["probes"]``.  ``hidden``, ``activation`` and
    ``val_fraction`` are passed on to the encoder training.
    """
    _check_data(data, k)
    started = time.perf_counter()
    plan = make_folds(data.n, k, make_rng(seed, "folds"))
    t_spec = spec.with_task(_treatment_task(data))
    y_spec = spec.with_task(REGRESSION)
    t_hat = np.zeros(data.n)
    y_hat = np.zeros(data.n)
    fits, traces, hold_latents = [], [], []
    for fold in range(k):
        tr, ho = plan.train(fold), plan.hold(fold)
        try:
            rep = None
            if flags.use_encoder:
                rep = fit_representation(data.x[tr], data.t[tr], data.y[tr], data.treatment,
                                         cfg, w, flags, make_rng(seed, "fold", fold, "encoder"),
                                         kernel, detach_theta=detach_theta, latent_dim=latent_dim,
                                         hidden=hidden, activation=activation,
                                         val_fraction=val_fraction)
                traces.append(rep.trace)
                z_tr = rep.transform(data.x[tr])
                z_ho = rep.transform(data.x[ho])
                ft_tr, fy_tr = z_tr.treatment_features(), z_tr.outcome_features()
                ft_ho, fy_ho = z_ho.treatment_features(), z_ho.outcome_features()
                hold_latents.append(z_ho)
            else:
                ft_tr = fy_tr = data.x[tr]
                ft_ho = fy_ho = data.x[ho]
            m = fit_nuisance(ft_tr, data.t[tr], t_spec, make_rng(seed, "fold", fold, "m"))
            g = fit_nuisance(fy_tr, data.y[tr], y_spec, make_rng(seed, "fold", fold, "g"))
        except Exception as exc:
            raise type(exc)(f"fold {fold}: {exc}") from exc
        t_hat[ho] = m.predict(ft_ho)
        y_hat[ho] = g.predict(fy_ho)
        fits.append(FoldFit(fold, tr, ho, m, g, rep))
    name = "ddml" if flags == AblationFlags() else "ddml" + _ablation_suffix(flags)
    report = _finish(name, data, plan, fits, t_hat, y_hat, traces, w.delta, w.eps_corr, started)
    if probes and hold_latents:
        per_fold = []
        for f, z in zip(fits, hold_latents):
            ho = f.hold_idx
            y_star = data.y[ho] - report.theta_hat * (data.t[ho] - t_hat[ho])
            per_fold.append(linear_probe(z, data.t[ho], y_star, data.treatment))
        report.diagnostics["probes"] = {
            block: {target: float(np.mean([p[block][target] for p in per_fold]))
                    for target in ("T", "Y*")}
            for block in ("z_t", "z_y", "z_c")
        }
    report.wall_time = time.perf_counter() - started
    return report


def _ablation_suffix(flags: AblationFlags) -> str:
    off = [name for name, on in (("enc", flags.use_encoder), ("dis", flags.use_dis),
                                 ("ort", flags.use_ort)) if not on]
    return "-wo-" + "-".join(off)


def orthogonality_probe(data: Dataset, report: EstimationReport, h: float, seed: int = 0,
                        moment: str = "orthogonal", scheme: str = "central") -> float:
    """Finite-difference slope of an empirical moment under nuisance perturbation.

    The fitted nuisances are shifted to ``m + s*r_m`` and ``g + s*r_g`` with
    ``r`` drawn uniformly from [0, 1] per row, and the moment is evaluated
    at the reported effect.  ``moment="orthogonal"`` uses the partialling-out
    score ``(Y - g - theta (T - m)) (T - m)``; ``"naive"`` uses
    ``Y - g - theta (T - m)``.  ``scheme`` is ``"central"`` or
    ``"forward"``.
    """
    if h < 0:
        raise InputError("perturbation scale must be non-negative")
    if moment not in ("orthogonal", "naive"):
        raise InputError(f"unknown moment {moment!r}")
    if scheme not in ("central", "forward"):
        raise InputError(f"unknown difference scheme {scheme!r}")
    if h == 0:
        return 0.0
    rng = make_rng(seed, "orthogonality-probe")
    r_m = rng.random(data.n)
    r_g = rng.random(data.n)
    theta = report.theta_hat

    def value(s):
        t_res = report.t_res - s * r_m
        y_res = report.y_res - s * r_g
        core = y_res - theta * t_res
        if moment == "orthogonal":
            return float(np.mean(core * t_res))
        return float(np.mean(core))

    if scheme == "central":
        return (value(h) - value(-h)) / (2.0 * h)
    return (value(h) - value(0.0)) / h


def auc_score(score, label) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic (ties averaged)."""
    score = as_vector(score)
    label = as_vector(label)
    pos = label == 1.0
    n_pos = int(pos.sum())
    n_neg = label.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    ranks = stats.rankdata(score)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _lstsq_fit(z, target):
    design = np.hstack([np.ones((z.shape[0], 1)), z])
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    return design @ coef


def _r2(z, target):
    sst = float(np.sum((target - target.mean()) ** 2))
    if sst <= 1e-12 * max(1.0, float(target @ target)) or z.shape[1] == 0:
        return 0.0
    resid = target - _lstsq_fit(z, target)
    return float(1.0 - (resid @ resid) / sst)


def linear_probe(z: RepresentationTriple, t, y_star, treatment: str = BINARY) -> dict:
    """Linear-probe scores for each latent block.

    Returns ``{block: {"T": score, "Y*": r2}}`` for ``z_t``, ``z_y``,
    ``z_c``.  The treatment score is the AUC (binary) or Spearman
    correlation (continuous) between the least-squares probe output and
    ``t``; the outcome score is the in-sample R^2 of regressing ``y_star``
    on the block.  Constant targets score 0.5 (AUC) or 0.
    """
    t = as_vector(t, "t")
    y_star = as_vector(y_star, "y_star")
    out = {}
    for name, block in (("z_t", z.z_t), ("z_y", z.z_y), ("z_c", z.z_c)):
        block = as_matrix(block, name)
        if block.shape[0] != t.shape[0] or y_star.shape[0] != t.shape[0]:
            raise ShapeError("probe inputs must have the same number of rows")
        constant_t = bool(np.all(t == t[0]))
        if treatment == BINARY:
            if constant_t or block.shape[1] == 0:
                t_score = 0.5
            else:
                t_score = auc_score(_lstsq_fit(block, t), t)
        else:
            if constant_t or block.shape[1] == 0:
                t_score = 0.0
            else:
                fitted = _lstsq_fit(block, t)
                t_score = 0.0 if np.ptp(fitted) == 0 else float(stats.spearmanr(fitted, t)[0])
        out[name] = {"T": t_score, "Y*": _r2(block, y_star)}
    return out
