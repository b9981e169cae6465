"""Synthetic benchmark data with entangled, nonlinearly distorted covariates,
plus a CSV loader for external data.

Draw order from the single generator stream: latent ``Z`` (n x d), mixing
matrix ``M`` (d x d), then either the Bernoulli uniforms (binary) or the
treatment noise (continuous), then the outcome noise.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .numcore import make_rng

__all__ = [
    "DgpConfig",
    "GroundTruth",
    "Dataset",
    "generate_covariates",
    "generate_binary",
    "generate_continuous",
    "generate",
    "load_csv",
    "write_csv",
]

BINARY = "binary"
CONTINUOUS = "continuous"


@dataclass(frozen=True)
class DgpConfig:
    n: int = 6000
    d: int = 20
    lambda_mix: float = 8.0
    alpha_c: float = 4.0
    alpha_t: float = 2.0
    sigma_t: float = 1.0
    sigma_y: float = 1.0
    theta_true: float = 5.0
    alpha_out: float = 1.0
    treatment: str = BINARY
    standardize_t: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.d < 10:
            raise InputError(f"d must be >= 10, got {self.d}")
        if self.n < 1:
            raise InputError(f"n must be >= 1, got {self.n}")
        if self.treatment not in (BINARY, CONTINUOUS):
            raise InputError(f"unknown treatment kind {self.treatment!r}")
        if self.sigma_t < 0 or self.sigma_y < 0:
            raise InputError("noise scales must be non-negative")

    @property
    def name(self) -> str:
        return f"{self.treatment.capitalize()}_{self.d}"


@dataclass
class GroundTruth:
    """What the generator knows: the effect to recover and its latent state.

    ``theta`` is the effect on the scale of the stored treatment column.  For
    a standardised continuous treatment this is ``theta_true * sd(T_raw)``.
    """

    theta: float
    theta_true: float
    z_c: np.ndarray | None = None
    z_t: np.ndarray | None = None
    z_y: np.ndarray | None = None
    t_raw: np.ndarray | None = None
    eps_y: np.ndarray | None = None
    alpha_out: float = 1.0


@dataclass
class Dataset:
    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    treatment: str
    truth: GroundTruth | None = None
    name: str = "dataset"
    columns: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim != 2:
            raise InputError("x must be 2-D")
        n = self.x.shape[0]
        if self.t.shape != (n,) or self.y.shape != (n,):
            raise InputError("x, t and y lengths disagree")
        if self.treatment not in (BINARY, CONTINUOUS):
            raise InputError(f"unknown treatment kind {self.treatment!r}")
        if self.treatment == BINARY and not np.all((self.t == 0.0) | (self.t == 1.0)):
            raise InputError("binary treatment must take values in {0, 1}")
        if not self.columns:
            self.columns = [f"x{j}" for j in range(self.x.shape[1])]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.x[rows], self.t[rows], self.y[rows], self.treatment, None,
                       self.name, list(self.columns))


def _latent_factors(x):
    z_c = 0.6 * x[:, 0] * x[:, 1] + 0.4 * x[:, 2] ** 2 + 0.3 * np.sin(x[:, 3] + x[:, 4])
    z_t = 0.5 * x[:, 5] * x[:, 6] + 0.3 * np.tanh(x[:, 7]) + 0.2 * np.cos(x[:, 8] + x[:, 9])
    z_y = 0.5 * x[:, 1] * x[:, 2] + 0.3 * np.cos(x[:, 0] + x[:, 3])
    return z_c, z_t, z_y


def generate_covariates(cfg: DgpConfig, rng: np.random.Generator):
    """Return ``(x, z_c, z_t, z_y)``; every entry of ``x`` lies in [-1.2, 1.2]."""
    n, d = cfg.n, cfg.d
    z = rng.standard_normal((n, d))
    m = cfg.lambda_mix * rng.standard_normal((d, d))
    x_lin = z + (z @ m) / d
    x = np.tanh(x_lin) + 0.2 * np.sin((x_lin @ m.T) / d)
    return (x, *_latent_factors(x))


def _sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def generate_binary(cfg: DgpConfig, rng: np.random.Generator | None = None) -> Dataset:
    if cfg.treatment != BINARY:
        raise InputError("generate_binary needs a binary-treatment config")
    rng = make_rng(cfg.seed, "dgp") if rng is None else rng
    x, z_c, z_t, z_y = generate_covariates(cfg, rng)
    p = _sigmoid(cfg.alpha_c * z_c + cfg.alpha_t * z_t)
    t = (rng.random(cfg.n) < p).astype(np.float64)
    eps = cfg.sigma_y * rng.standard_normal(cfg.n)
    y = cfg.alpha_out * (z_c + z_y) + cfg.theta_true * t + eps
    truth = GroundTruth(cfg.theta_true, cfg.theta_true, z_c, z_t, z_y, t.copy(), eps, cfg.alpha_out)
    return Dataset(x, t, y, BINARY, truth, cfg.name)


def generate_continuous(cfg: DgpConfig, rng: np.random.Generator | None = None) -> Dataset:
    if cfg.treatment != CONTINUOUS:
        raise InputError("generate_continuous needs a continuous-treatment config")
    rng = make_rng(cfg.seed, "dgp") if rng is None else rng
    x, z_c, z_t, z_y = generate_covariates(cfg, rng)
    eta = cfg.sigma_t * rng.standard_normal(cfg.n)
    t_raw = (cfg.alpha_c * (z_c + 0.5 * np.tanh(z_c))
             + cfg.alpha_t * (z_t + 0.3 * np.sin(z_t)) + eta)
    eps = cfg.sigma_y * rng.standard_normal(cfg.n)
    y = cfg.alpha_out * (z_c + z_y) + cfg.theta_true * t_raw + eps
    theta = cfg.theta_true
    t = t_raw
    if cfg.standardize_t:
        sd = float(t_raw.std())
        if sd > 0:
            t = (t_raw - t_raw.mean()) / sd
            theta = cfg.theta_true * sd
        else:
            t = t_raw - t_raw.mean()
    truth = GroundTruth(theta, cfg.theta_true, z_c, z_t, z_y, t_raw, eps, cfg.alpha_out)
    return Dataset(x, t, y, CONTINUOUS, truth, cfg.name)


def generate(cfg: DgpConfig, rng: np.random.Generator | None = None) -> Dataset:
    if cfg.treatment == BINARY:
        return generate_binary(cfg, rng)
    return generate_continuous(cfg, rng)


def write_csv(data: Dataset, path, treatment_col: str = "T", outcome_col: str = "Y") -> None:
    """Write ``data`` with 17 significant digits so a reload is exact."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*data.columns, treatment_col, outcome_col])
        for row, t, y in zip(data.x, data.t, data.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(t)), repr(float(y))])


def load_csv(path, treatment: str, outcome: str, covariates=None,
             treatment_kind: str = "auto") -> Dataset:
    """Load a comma-separated file with a header row.

    ``covariates=None`` takes every column except treatment and outcome.
    ``treatment_kind="auto"`` picks binary when the treatment column only
    holds 0 and 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: file is empty") from None
        rows = [r for r in reader if r]
    if not rows:
        raise InputError(f"{path}: no data rows (empty dataset)")
    if covariates is None:
        covariates = [h for h in header if h not in (treatment, outcome)]
    for col in [treatment, outcome, *covariates]:
        if col not in header:
            raise InputError(f"{path}: missing column {col!r}")
    pos = {h: i for i, h in enumerate(header)}
    wanted = [*covariates, treatment, outcome]
    values = np.empty((len(rows), len(wanted)))
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise InputError(f"{path}: row {i + 1} has {len(r)} fields, expected {len(header)}")
        for j, col in enumerate(wanted):
            cell = r[pos[col]].strip()
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{path}: non-numeric value {cell!r} at row {i + 1}, column {col!r}") from None
            if not math.isfinite(v):
                raise InputError(f"{path}: missing or non-finite value at row {i + 1}, column {col!r}")
            values[i, j] = v
    t = values[:, -2]
    is_binary = bool(np.all((t == 0.0) | (t == 1.0)))
    if treatment_kind == "auto":
        treatment_kind = BINARY if is_binary else CONTINUOUS
    if treatment_kind == BINARY and not is_binary:
        bad = int(np.flatnonzero((t != 0.0) & (t != 1.0))[0])
        raise InputError(f"{path}: binary treatment column {treatment!r} has value {t[bad]!r} at row {bad + 1}")
    return Dataset(values[:, :-2], t, values[:, -1], treatment_kind, None, path.stem, list(covariates))
