"""Joint training of the role-disentangling encoder and the dual prediction
heads.

The encoder maps covariates to three latent blocks ``(z_c, z_t, z_y)``
(confounding, treatment-specific, outcome-specific).  The treatment head
reads ``[z_c, z_t]`` and the outcome head reads ``[z_c, z_y]``.  Training
minimises::

    L_sup + lambda_dis * (HSIC(z_c,z_t) + HSIC(z_c,z_y) + HSIC(z_t,z_y))
          + lambda_ort * |Corr(v, e - theta_tra * v)|

where ``v`` and ``e`` are the in-batch treatment and outcome residuals and
``theta_tra = v.e / (v.v + delta)``.  Weight decay is applied by the
optimiser rather than as a loss term.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericError, ShapeError
from .hsic import KernelSpec, hsic_sum_and_grads
from .numcore import Adam, FeedForwardNet, TrainConfig, as_matrix, as_vector, clip_global_norm

__all__ = [
    "LossWeights",
    "AblationFlags",
    "RepresentationTriple",
    "EncoderModel",
    "HeadModel",
    "Standardizer",
    "FittedRepresentation",
    "encode",
    "supervised_loss",
    "rdo_loss",
    "total_loss",
    "total_loss_and_grads",
    "fit",
]

BINARY = "binary"
CONTINUOUS = "continuous"


@dataclass(frozen=True)
class LossWeights:
    lambda_dis: float = 1.0
    lambda_ort: float = 1.0
    delta: float = 1e-8
    eps_corr: float = 1e-8

    def __post_init__(self):
        if self.lambda_dis < 0 or self.lambda_ort < 0:
            raise InputError("loss weights must be non-negative")
        if not (self.delta > 0 and self.eps_corr > 0):
            raise InputError("delta and eps_corr must be strictly positive")


@dataclass(frozen=True)
class AblationFlags:
    """Switches for the three DDML components; all on is the full method."""

    use_encoder: bool = True
    use_dis: bool = True
    use_ort: bool = True


@dataclass
class RepresentationTriple:
    z_c: np.ndarray
    z_t: np.ndarray
    z_y: np.ndarray

    def treatment_features(self) -> np.ndarray:
        return np.hstack([self.z_c, self.z_t])

    def outcome_features(self) -> np.ndarray:
        return np.hstack([self.z_c, self.z_y])

    def blocks(self):
        return {"z_c": self.z_c, "z_t": self.z_t, "z_y": self.z_y}


class EncoderModel:
    """Three independent subnetworks, one per latent block."""

    def __init__(self, n_in: int, latent_dims=(16, 16, 16), hidden=(64, 64),
                 rng: np.random.Generator | None = None, activation: str = "relu"):
        self.n_in = int(n_in)
        self.latent_dims = tuple(int(k) for k in latent_dims)
        self.nets = [
            FeedForwardNet((self.n_in, *hidden, k), rng, hidden=activation)
            for k in self.latent_dims
        ]

    @property
    def params(self):
        return [p for net in self.nets for p in net.params]

    def copy(self):
        other = EncoderModel.__new__(EncoderModel)
        other.n_in = self.n_in
        other.latent_dims = self.latent_dims
        other.nets = [net.copy() for net in self.nets]
        return other


class HeadModel:
    """Treatment head over ``[z_c, z_t]`` and outcome head over ``[z_c, z_y]``.

    For a binary treatment the treatment head emits a logit.
    """

    def __init__(self, t_in: int, y_in: int, treatment: str = BINARY, hidden=(64, 64),
                 rng: np.random.Generator | None = None, activation: str = "relu"):
        if treatment not in (BINARY, CONTINUOUS):
            raise InputError(f"unknown treatment kind {treatment!r}")
        self.treatment = treatment
        self.t_net = FeedForwardNet((t_in, *hidden, 1), rng, hidden=activation)
        self.y_net = FeedForwardNet((y_in, *hidden, 1), rng, hidden=activation)

    @property
    def params(self):
        return self.t_net.params + self.y_net.params

    def copy(self):
        other = HeadModel.__new__(HeadModel)
        other.treatment = self.treatment
        other.t_net = self.t_net.copy()
        other.y_net = self.y_net.copy()
        return other


def encode(model: EncoderModel, x, cache: bool = False) -> RepresentationTriple:
    x = as_matrix(x, "x")
    if x.shape[1] != model.n_in:
        raise ShapeError(f"encoder expects {model.n_in} columns, got {x.shape[1]}")
    z = [net.forward(x, cache=cache) for net in model.nets]
    return RepresentationTriple(*z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_binary(t):
    if not np.all((t == 0.0) | (t == 1.0)):
        raise InputError("binary treatment must take values in {0, 1}")


def _supervised(t_out, y_out, t, y, treatment):
    n = t.shape[0]
    if treatment == BINARY:
        _check_binary(t)
        # mean of softplus(z) - t z, the logit form of binary cross-entropy
        lt = float(np.mean(np.logaddexp(0.0, t_out) - t * t_out))
        gt = (_sigmoid(t_out) - t) / n
    else:
        r = t_out - t
        lt = float(np.mean(r * r))
        gt = 2.0 * r / n
    r = y_out - y
    ly = float(np.mean(r * r))
    gy = 2.0 * r / n
    return lt, ly, gt, gy


def supervised_loss(heads: HeadModel, z: RepresentationTriple, t, y) -> float:
    """Treatment loss (BCE on logits or MSE) plus outcome MSE."""
    t = as_vector(t, "t")
    y = as_vector(y, "y")
    if not (t.shape[0] == y.shape[0] == z.z_c.shape[0]):
        raise ShapeError("t, y and latents must have the same number of rows")
    t_out = heads.t_net.forward(z.treatment_features(), cache=False)[:, 0]
    y_out = heads.y_net.forward(z.outcome_features(), cache=False)[:, 0]
    lt, ly, _, _ = _supervised(t_out, y_out, t, y, heads.treatment)
    return lt + ly


def _rdo(v, e, w: LossWeights, detach_theta: bool = False):
    """Value and gradients of ``|Corr(v, e - theta v)|`` w.r.t. v and e."""
    vv = float(v @ v)
    ve = float(v @ e)
    B = vv + w.delta
    theta = ve / B
    u = e - theta * v
    vc = v - v.mean()
    uc = u - u.mean()
    c = float(vc @ uc)
    sv = float(np.sqrt(vc @ vc))
    su = float(np.sqrt(uc @ uc))
    D = sv * su + w.eps_corr
    corr = c / D
    loss = abs(corr)
    s = float(np.sign(corr))
    dv_unit = vc / sv if sv > 0 else np.zeros_like(vc)
    du_unit = uc / su if su > 0 else np.zeros_like(uc)
    # d|corr|/dv holding u fixed, and d|corr|/du
    g_v = s * (uc / D - c / (D * D) * su * dv_unit)
    g_u = s * (vc / D - c / (D * D) * sv * du_unit)
    # u = e - theta v
    g_e = g_u.copy()
    g_v = g_v - theta * g_u
    if not detach_theta:
        g_theta = -float(v @ g_u)
        g_v = g_v + g_theta * (e / B - 2.0 * ve * v / (B * B))
        g_e = g_e + g_theta * v / B
    return theta, loss, g_v, g_e


def rdo_loss(t, y, t_pred, y_pred, w: LossWeights = LossWeights()):
    """Return ``(theta_tra, |Corr(v, u)|)`` for the given residuals.

    For a binary treatment ``t_pred`` is the predicted probability.
    """
    t, y, t_pred, y_pred = (as_vector(a) for a in (t, y, t_pred, y_pred))
    n = t.shape[0]
    if not (y.shape[0] == t_pred.shape[0] == y_pred.shape[0] == n):
        raise ShapeError("rdo_loss inputs must have equal length")
    if n < 2:
        raise InputError("rdo_loss needs at least 2 samples")
    theta, loss, _, _ = _rdo(t - t_pred, y - y_pred, w)
    return theta, loss


@dataclass
class LossParts:
    total: float
    sup: float
    dis: float
    ort: float
    theta_tra: float
    sup_t: float = 0.0
    sup_y: float = 0.0


def _loss_and_grads(encoder, heads, x, t, y, w, flags, kernel, hsic_idx=None,
                    detach_theta=False, need_grad=True):
    """Forward pass through encoder and heads, returning loss parts and the
    gradient for every parameter (encoder first, then heads)."""
    n = x.shape[0]
    if flags.use_encoder:
        z = encode(encoder, x, cache=need_grad)
        t_in, y_in = z.treatment_features(), z.outcome_features()
    else:
        z = None
        t_in = y_in = x
    t_out = heads.t_net.forward(t_in, cache=need_grad)[:, 0]
    y_out = heads.y_net.forward(y_in, cache=need_grad)[:, 0]
    lt, ly, gt, gy = _supervised(t_out, y_out, t, y, heads.treatment)
    total = lt + ly

    dis = 0.0
    gz = None
    if flags.use_encoder and flags.use_dis and w.lambda_dis > 0:
        rows = hsic_idx if hsic_idx is not None else slice(None)
        blocks = [z.z_c[rows], z.z_t[rows], z.z_y[rows]]
        dis, _, hg = hsic_sum_and_grads(blocks, kernel)
        total += w.lambda_dis * dis
        if need_grad:
            gz = [np.zeros_like(b) for b in (z.z_c, z.z_t, z.z_y)]
            for g_full, g_sub in zip(gz, hg):
                g_full[rows] += w.lambda_dis * g_sub

    ort = 0.0
    theta_tra = 0.0
    if flags.use_ort and w.lambda_ort > 0 and n >= 2:
        t_hat = _sigmoid(t_out) if heads.treatment == BINARY else t_out
        theta_tra, ort, g_v, g_e = _rdo(t - t_hat, y - y_out, w, detach_theta)
        total += w.lambda_ort * ort
        # v = t - t_hat, e = y - y_out
        g_that = -w.lambda_ort * g_v
        if heads.treatment == BINARY:
            g_that = g_that * t_hat * (1.0 - t_hat)
        gt = gt + g_that
        gy = gy - w.lambda_ort * g_e

    parts = LossParts(total, lt + ly, dis, ort, theta_tra, lt, ly)
    if not need_grad:
        return parts, None

    ht_grads, g_tin = heads.t_net.backward(gt[:, None])
    hy_grads, g_yin = heads.y_net.backward(gy[:, None])
    if not flags.use_encoder:
        return parts, ht_grads + hy_grads
    dc, dt, dy = encoder.latent_dims
    g_c = g_tin[:, :dc] + g_yin[:, :dc]
    g_t = g_tin[:, dc:]
    g_y = g_yin[:, dc:]
    if gz is not None:
        g_c = g_c + gz[0]
        g_t = g_t + gz[1]
        g_y = g_y + gz[2]
    enc_grads = []
    for net, g in zip(encoder.nets, (g_c, g_t, g_y)):
        enc_grads.extend(net.backward(g)[0])
    return parts, enc_grads + ht_grads + hy_grads


def _supervised_on(encoder, heads, x, t, y, flags) -> float:
    parts, _ = _loss_and_grads(encoder, heads, x, t, y, LossWeights(0.0, 0.0), flags,
                               KernelSpec(), need_grad=False)
    return parts.sup


def total_loss_and_grads(encoder, heads, x, t, y, w: LossWeights = LossWeights(),
                         flags: AblationFlags = AblationFlags(), kernel: KernelSpec = KernelSpec(),
                         detach_theta: bool = False):
    """Loss parts and parameter gradients (encoder params, then heads)."""
    x = as_matrix(x, "x")
    t = as_vector(t, "t")
    y = as_vector(y, "y")
    if x.shape[0] == 0:
        raise InputError("batch must be non-empty")
    if t.shape[0] != x.shape[0] or y.shape[0] != x.shape[0]:
        raise ShapeError("x, t and y must have the same number of rows")
    return _loss_and_grads(encoder, heads, x, t, y, w, flags, kernel, detach_theta=detach_theta)


def total_loss(encoder, heads, x, t, y, w: LossWeights = LossWeights(),
               flags: AblationFlags = AblationFlags(), kernel: KernelSpec = KernelSpec(),
               detach_theta: bool = False) -> float:
    """Total training objective on one batch (regularisation excluded)."""
    x = as_matrix(x, "x")
    t = as_vector(t, "t")
    y = as_vector(y, "y")
    if x.shape[0] == 0:
        raise InputError("batch must be non-empty")
    if t.shape[0] != x.shape[0] or y.shape[0] != x.shape[0]:
        raise ShapeError("x, t and y must have the same number of rows")
    parts, _ = _loss_and_grads(encoder, heads, x, t, y, w, flags, kernel,
                               detach_theta=detach_theta, need_grad=False)
    return parts.total


class Standardizer:
    """Column-wise affine map fitted on training rows; zero scale -> 1."""

    def __init__(self, data):
        data = np.asarray(data, dtype=np.float64)
        self.mean = data.mean(axis=0)
        sd = data.std(axis=0)
        self.scale = np.where(sd > 1e-12, sd, 1.0)

    def transform(self, data):
        return (np.asarray(data, dtype=np.float64) - self.mean) / self.scale

    def inverse(self, data):
        return np.asarray(data, dtype=np.float64) * self.scale + self.mean


@dataclass
class FittedRepresentation:
    """Trained encoder and heads plus the training-fold standardisation."""

    encoder: EncoderModel | None
    heads: HeadModel
    flags: AblationFlags
    x_scaler: Standardizer
    trace: dict = field(default_factory=dict)

    def transform(self, x) -> RepresentationTriple:
        """Latent blocks for new rows.  Without an encoder every block is the
        standardised covariate matrix itself."""
        xs = self.x_scaler.transform(as_matrix(x, "x"))
        if self.encoder is None:
            return RepresentationTriple(xs, xs[:, :0], xs[:, :0])
        return encode(self.encoder, xs)


def default_latent_dim(d: int) -> int:
    return min(16, int(d))


def build_models(d: int, treatment: str, flags: AblationFlags, rng, latent_dim=None,
                 hidden=(64, 64), activation: str = "relu"):
    k = default_latent_dim(d) if latent_dim is None else int(latent_dim)
    if flags.use_encoder:
        encoder = EncoderModel(d, (k, k, k), hidden, rng, activation)
        heads = HeadModel(2 * k, 2 * k, treatment, hidden, rng, activation)
    else:
        encoder = None
        heads = HeadModel(d, d, treatment, hidden, rng, activation)
    return encoder, heads


def fit(x, t, y, treatment: str, cfg: TrainConfig = TrainConfig(), w: LossWeights = LossWeights(),
        flags: AblationFlags = AblationFlags(), rng: np.random.Generator | None = None,
        kernel: KernelSpec = KernelSpec(), hsic_max_rows: int = 256, detach_theta: bool = False,
        latent_dim: int | None = None, hidden=(64, 64),
        activation: str = "relu", val_fraction: float = 0.0) -> FittedRepresentation:
    """Train encoder and heads on one training fold.

    Parameters
    ----------
    x, t, y : array_like
        Covariates (n, d), treatment (n,) and outcome (n,) on the original
        scale.  Covariates and outcome (and a continuous treatment) are
        standardised internally with statistics from these rows.
    treatment : {"binary", "continuous"}
    cfg : TrainConfig
    w : LossWeights
    flags : AblationFlags
        With ``use_encoder=False`` both heads read the covariates directly and
        the disentanglement term is dropped.
    rng : numpy Generator
        Drives initialisation, batch order and HSIC row subsampling.
    hsic_max_rows : int
        Batches larger than this compute HSIC on a random row subset.
    detach_theta : bool
        Treat ``theta_tra`` as a constant when differentiating.
    val_fraction : float
        Share of rows held out for early stopping.  When positive, the
        returned parameters are those of the epoch with the lowest
        supervised loss on the held-out rows (``trace["val_sup"]``).

    Returns
    -------
    FittedRepresentation
        ``trace`` holds per-epoch lists ``sup``, ``dis``, ``ort`` and
        ``total`` (epoch averages over batches) plus ``initial_total``.
    """
    x = as_matrix(x, "x")
    t = as_vector(t, "t")
    y = as_vector(y, "y")
    n, d = x.shape
    if t.shape[0] != n or y.shape[0] != n:
        raise ShapeError("x, t and y must have the same number of rows")
    if treatment == BINARY:
        _check_binary(t)
    rng = np.random.default_rng(0) if rng is None else rng
    if not 0.0 <= val_fraction < 1.0:
        raise InputError(f"val_fraction must be in [0, 1), got {val_fraction}")

    x_scaler = Standardizer(x)
    y_scaler = Standardizer(y)
    xs = x_scaler.transform(x)
    ys = y_scaler.transform(y)
    ts = Standardizer(t).transform(t) if treatment == CONTINUOUS else t
    n_val = int(round(val_fraction * n))
    if n_val > 0:
        if n - n_val < 2:
            raise InputError("too few rows left for training after the validation split")
        perm = rng.permutation(n)
        val, keep = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        xv, tv, yv = xs[val], ts[val], ys[val]
        xs, ts, ys = xs[keep], ts[keep], ys[keep]
        n = xs.shape[0]

    encoder, heads = build_models(d, treatment, flags, rng, latent_dim, hidden, activation)
    params = (encoder.params if encoder is not None else []) + heads.params
    opt = Adam(params, cfg)
    batch = cfg.resolve_batch(n)
    names = ("total", "sup", "dis", "ort", "theta_tra", "sup_t", "sup_y")
    trace = {name: [] for name in names}

    def hsic_rows(m):
        if flags.use_encoder and flags.use_dis and m > hsic_max_rows:
            return np.sort(rng.choice(m, hsic_max_rows, replace=False))
        return None

    init, _ = _loss_and_grads(encoder, heads, xs, ts, ys, w, flags, kernel,
                              hsic_rows(n), detach_theta, need_grad=False)
    trace["initial_total"] = init.total
    trace["initial_sup_y"] = init.sup_y
    best_val, best_state = np.inf, None
    if n_val > 0:
        trace["val_sup"] = []

    for epoch in range(cfg.epochs):
        order = np.arange(n) if batch >= n else rng.permutation(n)
        sums = np.zeros(len(names))
        n_batches = 0
        for start in range(0, n, batch):
            rows = order[start:start + batch]
            if rows.size < 2:
                continue
            if batch >= n:
                xb, tb, yb = xs, ts, ys
            else:
                xb, tb, yb = xs[rows], ts[rows], ys[rows]
            parts, grads = _loss_and_grads(encoder, heads, xb, tb, yb, w, flags, kernel,
                                           hsic_rows(rows.size), detach_theta)
            for name in ("sup", "dis", "ort"):
                if not np.isfinite(getattr(parts, name)):
                    raise NumericError(f"non-finite {name} loss at epoch {epoch}")
            clip_global_norm(grads, cfg.grad_clip)
            opt.step(grads)
            sums += [getattr(parts, name) for name in names]
            n_batches += 1
        sums /= max(n_batches, 1)
        for key, val in zip(names, sums):
            trace[key].append(float(val))
        if n_val > 0:
            score = _supervised_on(encoder, heads, xv, tv, yv, flags)
            trace["val_sup"].append(score)
            if score < best_val:
                best_val, best_state = score, [p.copy() for p in params]
    if best_state is not None:
        for p, b in zip(params, best_state):
            p[...] = b
        trace["best_epoch"] = int(np.argmin(trace["val_sup"]))
    return FittedRepresentation(encoder, heads, flags, x_scaler, trace)
