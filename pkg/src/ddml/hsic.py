"""Hilbert-Schmidt independence criterion with Gaussian RBF kernels.

The statistic is the biased V-statistic ``trace(K H L H) / n**2`` with
``H = I - 11^T / n``.  Bandwidths follow the median heuristic on the
current sample and are treated as constants when differentiating.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InputError, ShapeError
from .numcore import as_matrix

__all__ = [
    "KernelSpec",
    "resolve_bandwidth",
    "gram_matrix",
    "hsic_value",
    "hsic_value_and_grad",
    "hsic_sum_and_grads",
]


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian RBF kernel; ``bandwidth`` is a float or ``"median"``."""

    bandwidth: float | str = "median"
    floor: float = 1e-8
    kind: str = "gaussian-rbf"

    def __post_init__(self):
        if self.kind != "gaussian-rbf":
            raise InputError(f"unsupported kernel {self.kind!r}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth not in ("median", "median-heuristic"):
                raise InputError(f"unknown bandwidth rule {self.bandwidth!r}")
        elif not self.bandwidth > 0:
            raise InputError(f"bandwidth must be > 0, got {self.bandwidth}")
        if not self.floor > 0:
            raise InputError("bandwidth floor must be > 0")


def _off_diagonal(d: np.ndarray) -> np.ndarray:
    return d[np.triu_indices(d.shape[0], k=1)]


def resolve_bandwidth(sq_dists: np.ndarray, spec: KernelSpec) -> float:
    """Bandwidth for a precomputed squared-distance matrix."""
    if isinstance(spec.bandwidth, str):
        sigma = float(np.sqrt(np.median(_off_diagonal(sq_dists))))
    else:
        sigma = float(spec.bandwidth)
    return max(sigma, spec.floor)


def _gram(samples: np.ndarray, spec: KernelSpec):
    d = kernels.pairwise_sq_dists(np.ascontiguousarray(samples))
    sigma = resolve_bandwidth(d, spec)
    K = np.exp(-d / (2.0 * sigma * sigma))
    return K, sigma


def gram_matrix(samples, spec: KernelSpec = KernelSpec()) -> np.ndarray:
    samples = as_matrix(samples, "samples")
    if samples.shape[0] < 2:
        raise InputError("gram matrix needs at least 2 rows")
    return _gram(samples, spec)[0]


def _center(K: np.ndarray) -> np.ndarray:
    """``H K H`` without forming ``H``."""
    row = K.mean(axis=0)
    return K - row[None, :] - row[:, None] + row.mean()


def _check_pair(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"row mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 2:
        raise InputError("HSIC needs at least 2 rows")
    return a, b


def hsic_value(a, b, spec: KernelSpec = KernelSpec()) -> float:
    a, b = _check_pair(a, b)
    n = a.shape[0]
    K, _ = _gram(a, spec)
    L, _ = _gram(b, spec)
    return float(np.sum(_center(K) * _center(L))) / (n * n)


def _rbf_input_grad(samples, K, sigma, dK):
    """Chain ``dL/dK`` through ``K_ij = exp(-|s_i - s_j|^2 / 2 sigma^2)``."""
    W = dK * K
    W = W + W.T
    return -(W.sum(axis=1)[:, None] * samples - W @ samples) / (sigma * sigma)


def hsic_value_and_grad(a, b, spec: KernelSpec = KernelSpec()):
    """HSIC value with gradients w.r.t. every entry of ``a`` and ``b``."""
    a, b = _check_pair(a, b)
    n = a.shape[0]
    K, sa = _gram(a, spec)
    L, sb = _gram(b, spec)
    Kc = _center(K)
    Lc = _center(L)
    value = float(np.sum(Kc * Lc)) / (n * n)
    # d value / dK = H L H / n^2 (and symmetrically for L)
    ga = _rbf_input_grad(a, K, sa, Lc / (n * n))
    gb = _rbf_input_grad(b, L, sb, Kc / (n * n))
    return value, ga, gb


def hsic_sum_and_grads(blocks, spec: KernelSpec = KernelSpec()):
    """Sum of HSIC over all unordered pairs of ``blocks``.

    Each block's Gram matrix is built once and shared by the pairs it takes
    part in.  Returns ``(total, per_pair_values, grads)`` where ``grads[i]``
    is the gradient of the total w.r.t. ``blocks[i]``.
    """
    blocks = [as_matrix(z, f"block{i}") for i, z in enumerate(blocks)]
    n = blocks[0].shape[0]
    if any(z.shape[0] != n for z in blocks):
        raise ShapeError("all blocks must have the same number of rows")
    if n < 2:
        raise InputError("HSIC needs at least 2 rows")
    grams = [_gram(z, spec) for z in blocks]
    centered = [_center(K) for K, _ in grams]
    values = {}
    dK = [np.zeros((n, n)) for _ in blocks]
    for i in range(len(blocks)):
        for j in range(i + 1, len(blocks)):
            values[(i, j)] = float(np.sum(centered[i] * grams[j][0])) / (n * n)
            dK[i] += centered[j]
            dK[j] += centered[i]
    grads = [
        _rbf_input_grad(z, K, s, g / (n * n))
        for z, (K, s), g in zip(blocks, grams, dK)
    ]
    return sum(values.values()), values, grads
