"""Dense linear algebra helpers, seeded randomness and a small feed-forward
network engine with hand-written backpropagation and AdamW.

Matrices are plain ``float64`` numpy arrays; the helpers here only add the
shape and finiteness checks the rest of the package relies on.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError, NumericError, ShapeError, StateError

__all__ = [
    "as_matrix",
    "as_vector",
    "mat_mul",
    "make_rng",
    "TrainConfig",
    "FeedForwardNet",
    "Adam",
    "sgd_adam_step",
    "clip_global_norm",
]


def as_matrix(a, name: str = "array") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def as_vector(a, name: str = "vector") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2 and a.shape[1] == 1:
        a = a[:, 0]
    if a.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {a.shape}")
    return a


def mat_mul(a, b) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite entries in matrix product")
    return out


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise InputError(f"rng keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Generator for ``seed`` refined by a path of keys.

    ``make_rng(7, "fold", 2)`` always yields the same stream and is
    statistically independent of ``make_rng(7, "fold", 3)``.  Keys may be
    non-negative ints or strings.
    """
    entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit seed from ``rng`` for handing to a sub-component."""
    return int(rng.integers(0, 2**63 - 1))


@dataclass
class TrainConfig:
    """Optimiser settings shared by every network in the package.

    ``weight_decay`` is applied decoupled from the gradient (AdamW style).
    ``batch_size`` is an int, ``"full"``, or ``"auto"`` (full batch up to
    8192 rows, else 256).
    """

    lr: float = 1e-3
    epochs: int = 300
    weight_decay: float = 1e-4
    batch_size: int | str = "auto"
    grad_clip: float | None = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise InputError(f"learning rate must be > 0, got {self.lr}")
        if self.epochs < 0:
            raise InputError(f"epochs must be >= 0, got {self.epochs}")
        if self.weight_decay < 0:
            raise InputError(f"weight decay must be >= 0, got {self.weight_decay}")
        if isinstance(self.batch_size, str):
            if self.batch_size not in ("full", "auto"):
                raise InputError(f"unknown batch size {self.batch_size!r}")
        elif self.batch_size < 1:
            raise InputError(f"batch size must be >= 1, got {self.batch_size}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise InputError(f"gradient clip must be > 0, got {self.grad_clip}")

    def resolve_batch(self, n: int) -> int:
        if self.batch_size == "full":
            return n
        if self.batch_size == "auto":
            return n if n <= 8192 else 256
        return min(int(self.batch_size), n)


_ACTIVATIONS = ("relu", "elu", "tanh", "linear")


def _act(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    if kind == "tanh":
        return np.tanh(z)
    return z


def _act_grad(kind, z, a):
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "elu":
        return np.where(z > 0, 1.0, a + 1.0)
    if kind == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


class FeedForwardNet:
    """Fully connected network ``x -> act(x W1 + b1) -> ... -> x Wk + bk``.

    Parameters
    ----------
    widths : sequence of int
        Layer widths including input and output, e.g. ``(20, 64, 64, 16)``.
    rng : numpy Generator, optional
        Source for He-uniform initialisation.  When omitted every weight is
        zero, which is mostly useful in tests.
    hidden : str
        Activation for hidden layers (``relu``, ``elu``, ``tanh``, ``linear``).
    output : str
        Activation for the last layer; ``linear`` for regression heads and
        logits.
    """

    def __init__(self, widths: Sequence[int], rng: np.random.Generator | None = None,
                 hidden: str = "relu", output: str = "linear"):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise InputError(f"invalid layer widths {widths}")
        for a in (hidden, output):
            if a not in _ACTIVATIONS:
                raise InputError(f"unknown activation {a!r}")
        self.widths = widths
        self.activations = [hidden] * (len(widths) - 2) + [output]
        self.weights = []
        self.biases = []
        for w_in, w_out in zip(widths[:-1], widths[1:]):
            if rng is None:
                W = np.zeros((w_in, w_out))
            else:
                bound = np.sqrt(6.0 / w_in)
                W = rng.uniform(-bound, bound, size=(w_in, w_out))
            self.weights.append(W)
            self.biases.append(np.zeros(w_out))
        self._cache = None

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.widths[:-1], self.widths[1:]))

    def copy(self) -> "FeedForwardNet":
        other = FeedForwardNet.__new__(FeedForwardNet)
        other.widths = list(self.widths)
        other.activations = list(self.activations)
        other.weights = [W.copy() for W in self.weights]
        other.biases = [b.copy() for b in self.biases]
        other._cache = None
        return other

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params():
            raise ShapeError(f"expected {self.n_params()} parameters, got {flat.size}")
        pos = 0
        for p in self.params:
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size

    def forward(self, x, cache: bool = True) -> np.ndarray:
        x = as_matrix(x, "x")
        if x.shape[1] != self.n_in:
            raise ShapeError(f"net expects {self.n_in} input columns, got {x.shape[1]}")
        inputs, pre, post = [], [], []
        a = x
        for W, b, kind in zip(self.weights, self.biases, self.activations):
            inputs.append(a)
            z = a @ W + b
            a = _act(kind, z)
            pre.append(z)
            post.append(a)
        self._cache = (inputs, pre, post) if cache else None
        return a

    __call__ = forward

    def backward(self, grad_out) -> tuple[list[np.ndarray], np.ndarray]:
        """Backpropagate ``dL/d(output)`` through the cached forward pass.

        Returns the parameter gradients (ordered like :attr:`params`) and the
        gradient with respect to the network input.
        """
        if self._cache is None:
            raise StateError("backward called without a cached forward pass")
        inputs, pre, post = self._cache
        g = as_matrix(grad_out, "grad_out")
        if g.shape != post[-1].shape:
            raise ShapeError(f"output gradient shape {g.shape} != output shape {post[-1].shape}")
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            g = g * _act_grad(self.activations[i], pre[i], post[i])
            grads[2 * i] = inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g


def clip_global_norm(grads: list[np.ndarray], max_norm: float | None) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class Adam:
    """AdamW over a fixed list of parameter arrays (updated in place)."""

    def __init__(self, params: list[np.ndarray], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ShapeError(f"expected {len(self.params)} gradients, got {len(grads)}")
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g.shape != p.shape:
                raise ShapeError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter array {i} (layer {i // 2})")
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            if cfg.weight_decay:
                p -= cfg.lr * cfg.weight_decay * p
            p -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def sgd_adam_step(net: FeedForwardNet, grads, cfg: TrainConfig, optimizer: Adam | None = None) -> Adam:
    """Apply one AdamW update to ``net``.

    Pass the returned optimiser back in on later calls so the moment
    estimates carry over.
    """
    if optimizer is None:
        optimizer = Adam(net.params, cfg)
    optimizer.step(list(grads))
    return optimizer
