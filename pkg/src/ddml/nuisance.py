"""Nuisance learners for E[T | features] and E[Y | features].

Two kinds are available: a small MLP built on :mod:`ddml.numcore` and a
random forest grown with the kernels in :mod:`ddml.kernels`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import InputError, ShapeError
from .numcore import Adam, FeedForwardNet, TrainConfig, as_matrix, as_vector, child_seed, \
    clip_global_norm, make_rng
from .trainer import Standardizer

__all__ = [
    "NuisanceSpec",
    "FittedNuisance",
    "MLPNuisance",
    "ForestNuisance",
    "ConstantNuisance",
    "fit_nuisance",
    "predict_nuisance",
]

REGRESSION = "regression"
BINARY_PROBABILITY = "binary-probability"


@dataclass(frozen=True)
class NuisanceSpec:
    """Learner kind, task and hyperparameters.

    ``max_features`` accepts ``"auto"`` (sqrt(p) for binary-probability,
    p/3 for regression, both rounded up), ``"sqrt"``, ``"third"``, ``"all"``
    or an int.  ``max_depth=None`` grows trees until leaves hit
    ``min_leaf``.
    """

    kind: str = "mlp"
    task: str = REGRESSION
    # random forest
    n_trees: int = 200
    max_depth: int | None = None
    min_leaf: int = 5
    max_features: int | str = "auto"
    bootstrap: bool = True
    # mlp
    hidden: tuple = (64, 64)
    epochs: int = 300
    lr: float = 1e-3
    weight_decay: float = 1e-4
    grad_clip: float | None = 5.0

    def __post_init__(self):
        if self.kind not in ("mlp", "random-forest"):
            raise InputError(f"unknown nuisance kind {self.kind!r}")
        if self.task not in (REGRESSION, BINARY_PROBABILITY):
            raise InputError(f"unknown nuisance task {self.task!r}")
        if self.n_trees < 1:
            raise InputError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise InputError("min_leaf must be >= 1")
        if self.epochs < 1:
            raise InputError("epochs must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise InputError("max_depth must be >= 0 or None")

    def with_task(self, task: str) -> "NuisanceSpec":
        return replace(self, task=task)

    def resolve_mtry(self, p: int) -> int:
        m = self.max_features
        if m == "auto":
            m = "sqrt" if self.task == BINARY_PROBABILITY else "third"
        if m == "sqrt":
            k = math.ceil(math.sqrt(p))
        elif m == "third":
            k = math.ceil(p / 3)
        elif m == "all":
            k = p
        elif isinstance(m, (int, np.integer)):
            k = int(m)
        else:
            raise InputError(f"unknown max_features rule {m!r}")
        return max(1, min(p, k))


@dataclass
class FittedNuisance:
    spec: NuisanceSpec
    n_features: int

    def _check(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim == 1 and x.size == 0:
            x = x.reshape(0, self.n_features)
        x = as_matrix(x, "features")
        if x.shape[1] != self.n_features:
            raise ShapeError(f"model was fitted on {self.n_features} features, got {x.shape[1]}")
        return x

    def predict(self, features) -> np.ndarray:
        x = self._check(features)
        if x.shape[0] == 0:
            return np.zeros(0)
        out = self._predict(x)
        if self.spec.task == BINARY_PROBABILITY:
            out = np.clip(out, 0.0, 1.0)
        return out

    def _predict(self, x):  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass
class ConstantNuisance(FittedNuisance):
    value: float = 0.0

    def _predict(self, x):
        return np.full(x.shape[0], self.value)


@dataclass
class MLPNuisance(FittedNuisance):
    net: FeedForwardNet = None
    x_scaler: Standardizer = None
    y_scaler: Standardizer | None = None

    def logits(self, features) -> np.ndarray:
        x = self._check(features)
        return self.net.forward(self.x_scaler.transform(x), cache=False)[:, 0]

    def _predict(self, x):
        out = self.net.forward(self.x_scaler.transform(x), cache=False)[:, 0]
        if self.spec.task == BINARY_PROBABILITY:
            return 0.5 * (1.0 + np.tanh(0.5 * out))
        return self.y_scaler.inverse(out)


@dataclass
class ForestNuisance(FittedNuisance):
    trees: list = field(default_factory=list)

    def tree_predictions(self, features) -> np.ndarray:
        """Per-tree predictions, shape (n_trees, rows)."""
        x = np.ascontiguousarray(self._check(features))
        return np.array([kernels.predict_tree(x, *tree) for tree in self.trees])

    def _predict(self, x):
        x = np.ascontiguousarray(x)
        total = np.zeros(x.shape[0])
        for tree in self.trees:
            total += kernels.predict_tree(x, *tree)
        return total / len(self.trees)


def _fit_mlp(x, y, spec, rng):
    x_scaler = Standardizer(x)
    xs = x_scaler.transform(x)
    if spec.task == REGRESSION:
        y_scaler = Standardizer(y)
        target = y_scaler.transform(y)
    else:
        y_scaler = None
        target = y
    n = x.shape[0]
    net = FeedForwardNet((x.shape[1], *spec.hidden, 1), rng)
    # start from the mean prediction (p = 0.5 for probabilities)
    net.weights[-1][:] = 0.0
    cfg = TrainConfig(lr=spec.lr, epochs=spec.epochs, weight_decay=spec.weight_decay,
                      batch_size="auto", grad_clip=spec.grad_clip)
    opt = Adam(net.params, cfg)
    batch = cfg.resolve_batch(n)
    for _ in range(cfg.epochs):
        order = np.arange(n) if batch >= n else rng.permutation(n)
        for start in range(0, n, batch):
            rows = order[start:start + batch]
            xb = xs if batch >= n else xs[rows]
            tb = target if batch >= n else target[rows]
            out = net.forward(xb)[:, 0]
            if spec.task == BINARY_PROBABILITY:
                g = (0.5 * (1.0 + np.tanh(0.5 * out)) - tb) / rows.size
            else:
                g = 2.0 * (out - tb) / rows.size
            grads, _ = net.backward(g[:, None])
            clip_global_norm(grads, cfg.grad_clip)
            opt.step(grads)
    return MLPNuisance(spec, x.shape[1], net=net, x_scaler=x_scaler, y_scaler=y_scaler)


def _canonical_order(x, y):
    # Sorting rows makes the forest independent of the caller's row order.
    keys = [y] + [x[:, j] for j in range(x.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def _fit_forest(x, y, spec, rng):
    order = _canonical_order(x, y)
    x = np.ascontiguousarray(x[order])
    y = np.ascontiguousarray(y[order])
    n, p = x.shape
    mtry = spec.resolve_mtry(p)
    max_depth = -1 if spec.max_depth is None else int(spec.max_depth)
    key_rows = min(2 * n + 1, 2 * math.ceil(n / spec.min_leaf) + 1)
    master = child_seed(rng)
    trees = []
    for i in range(spec.n_trees):
        tree_rng = make_rng(master, "tree", i)
        if spec.bootstrap:
            idx = tree_rng.integers(0, n, size=n)
            xb, yb = np.ascontiguousarray(x[idx]), np.ascontiguousarray(y[idx])
        else:
            xb, yb = x, y
        keys = tree_rng.random((key_rows, p))
        trees.append(kernels.grow_tree(xb, yb, keys, mtry, spec.min_leaf, max_depth))
    return ForestNuisance(spec, p, trees=trees)


def fit_nuisance(features, target, spec: NuisanceSpec, rng: np.random.Generator) -> FittedNuisance:
    """Fit a nuisance model ``features -> target``.

    A constant target short-circuits to a constant predictor for either
    learner kind.
    """
    x = as_matrix(features, "features")
    y = as_vector(target, "target")
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"{x.shape[0]} feature rows but {y.shape[0]} targets")
    if x.shape[0] < 2:
        raise InputError("nuisance fitting needs at least 2 rows")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InputError("features and target must be finite")
    if spec.task == BINARY_PROBABILITY and not np.all((y == 0.0) | (y == 1.0)):
        raise InputError("binary-probability target must take values in {0, 1}")
    if np.all(y == y[0]):
        return ConstantNuisance(spec, x.shape[1], value=float(y[0]))
    if spec.kind == "mlp":
        return _fit_mlp(x, y, spec, rng)
    return _fit_forest(x, y, spec, rng)


def predict_nuisance(model: FittedNuisance, features) -> np.ndarray:
    return model.predict(features)
