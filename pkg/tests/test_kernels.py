import numpy as np
import pytest

from ddml import kernels
from ddml.numcore import make_rng

pytestmark = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")


def test_pairwise_distances_agree():
    a = make_rng(0).standard_normal((40, 5))
    ref = np.array([[np.sum((p - q) ** 2) for q in a] for p in a])
    for fn in (kernels.pairwise_sq_dists_numpy, kernels.pairwise_sq_dists_numba):
        assert np.max(np.abs(fn(a) - ref)) < 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_tree_backends_identical(seed):
    rng = make_rng(seed, "tree-backends")
    n, p = 120, 4
    x = np.round(rng.standard_normal((n, p)), 1)
    y = x[:, 0] - x[:, 2] ** 2 + rng.standard_normal(n)
    keys = rng.random((2 * n + 1, p))
    a = kernels.grow_tree_numpy(x, y, keys, 2, 3, -1)
    b = kernels.grow_tree_numba(x, y, keys, 2, 3, -1)
    for u, v in zip(a, b):
        assert np.array_equal(u, v)
    xt = rng.standard_normal((30, p))
    assert np.array_equal(kernels.predict_tree_numpy(xt, *a), kernels.predict_tree_numba(xt, *b))


def test_depth_limit():
    rng = make_rng(9)
    x = rng.standard_normal((50, 2))
    y = rng.standard_normal(50)
    keys = rng.random((101, 2))
    for grow in (kernels.grow_tree_numpy, kernels.grow_tree_numba):
        feature = grow(x, y, keys, 2, 1, 0)[0]
        assert feature.tolist() == [-1]
        assert np.sum(grow(x, y, keys, 2, 1, 1)[0] >= 0) == 1
