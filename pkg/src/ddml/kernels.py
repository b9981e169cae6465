"""Hot numeric kernels with numba and pure-numpy implementations.

Each kernel exists as ``<name>_numba`` and ``<name>_numpy``; the bare name is
bound to whichever backend :mod:`ddml._backend` selected.  Both variants
produce identical results (tree growing is bit-identical; distance matrices
agree to rounding).
"""
from __future__ import annotations

import numpy as np

from ._backend import BACKEND, HAVE_NUMBA, njit

__all__ = [
    "BACKEND",
    "pairwise_sq_dists",
    "grow_tree",
    "predict_tree",
]


# --------------------------------------------------------------------------
# pairwise squared distances

def pairwise_sq_dists_numpy(a: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", a, a)
    d = sq[:, None] + sq[None, :] - 2.0 * (a @ a.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _pairwise_sq_dists_loop(a):
    n, p = a.shape
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for k in range(p):
                diff = a[i, k] - a[j, k]
                s += diff * diff
            out[i, j] = s
            out[j, i] = s
    return out


# --------------------------------------------------------------------------
# regression tree growing
#
# Trees are stored as flat arrays: feature (-1 for a leaf), threshold, left,
# right, value.  Nodes are expanded depth-first from an explicit stack so both
# backends visit nodes (and consume the per-node random keys) in the same
# order.  The split criterion is the reduction in summed squared error; for
# 0/1 targets this equals twice the Gini impurity reduction, so one routine
# serves regression and binary-probability forests.

def _best_split_numpy(xs, ys, total, min_leaf):
    """Best threshold for one feature. Returns (score, threshold, ok)."""
    order = np.argsort(xs, kind="stable")
    xs = xs[order]
    ys = ys[order]
    n = xs.shape[0]
    csum = np.cumsum(ys)
    n_left = np.arange(1, n)
    valid = xs[1:] > xs[:-1]
    valid &= (n_left >= min_leaf) & (n - n_left >= min_leaf)
    if not valid.any():
        return -np.inf, 0.0, False
    s_left = csum[:-1]
    score = s_left * s_left / n_left + (total - s_left) ** 2 / (n - n_left)
    score = np.where(valid, score, -np.inf)
    k = int(np.argmax(score))
    return float(score[k]), 0.5 * (xs[k] + xs[k + 1]), True


def grow_tree_numpy(X, y, keys, mtry, min_leaf, max_depth):
    n, p = X.shape
    cap = 2 * n + 1
    feature = -np.ones(cap, dtype=np.int64)
    threshold = np.zeros(cap)
    left = -np.ones(cap, dtype=np.int64)
    right = -np.ones(cap, dtype=np.int64)
    value = np.zeros(cap)
    idx = np.arange(n)
    # stack entries: (node id, start, stop, depth) over the index buffer
    stack = [(0, 0, n, 0)]
    n_nodes = 1
    n_visited = 0
    while stack:
        node, start, stop, depth = stack.pop()
        rows = idx[start:stop]
        yn = y[rows]
        m = stop - start
        # sequential sum in index order, matching the loop kernel bit for bit
        total = float(np.cumsum(yn)[-1])
        value[node] = total / m
        key_row = keys[n_visited % keys.shape[0]]
        n_visited += 1
        if m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue
        parent = total * total / m
        feats = np.sort(np.argsort(key_row, kind="stable")[:mtry])
        best = parent + 1e-12 * max(1.0, abs(parent))
        best_f = -1
        best_t = 0.0
        for f in feats:
            score, thr, ok = _best_split_numpy(X[rows, f], yn, total, min_leaf)
            if ok and score > best:
                best = score
                best_f = int(f)
                best_t = thr
        if best_f < 0:
            continue
        go_left = X[rows, best_f] <= best_t
        lrows = rows[go_left]
        rrows = rows[~go_left]
        idx[start:start + lrows.size] = lrows
        idx[start + lrows.size:stop] = rrows
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        mid = start + lrows.size
        # push right first so the left child is expanded first
        stack.append((n_nodes + 1, mid, stop, depth + 1))
        stack.append((n_nodes, start, mid, depth + 1))
        n_nodes += 2
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(), value[:n_nodes].copy())


def _grow_tree_loop(X, y, keys, mtry, min_leaf, max_depth):
    n, p = X.shape
    cap = 2 * n + 1
    feature = -np.ones(cap, dtype=np.int64)
    threshold = np.zeros(cap)
    left = -np.ones(cap, dtype=np.int64)
    right = -np.ones(cap, dtype=np.int64)
    value = np.zeros(cap)
    idx = np.arange(n)
    st_node = np.zeros(cap, dtype=np.int64)
    st_start = np.zeros(cap, dtype=np.int64)
    st_stop = np.zeros(cap, dtype=np.int64)
    st_depth = np.zeros(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_start[0] = 0
    st_stop[0] = n
    st_depth[0] = 0
    top = 1
    n_nodes = 1
    n_visited = 0
    xs = np.empty(n)
    ys = np.empty(n)
    tmp = np.empty(n, dtype=np.int64)
    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        stop = st_stop[top]
        depth = st_depth[top]
        m = stop - start
        total = 0.0
        for i in range(start, stop):
            total += y[idx[i]]
        value[node] = total / m
        key_row = keys[n_visited % keys.shape[0]]
        n_visited += 1
        if m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue
        parent = total * total / m
        feats = np.sort(np.argsort(key_row, kind="mergesort")[:mtry])
        best = parent + 1e-12 * max(1.0, abs(parent))
        best_f = -1
        best_t = 0.0
        for fi in range(feats.shape[0]):
            f = feats[fi]
            for i in range(m):
                xs[i] = X[idx[start + i], f]
            order = np.argsort(xs[:m], kind="mergesort")
            for i in range(m):
                ys[i] = y[idx[start + order[i]]]
            s_left = 0.0
            fbest = -np.inf
            fk = -1
            for k in range(m - 1):
                s_left += ys[k]
                nl = k + 1
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                if not xs[order[k + 1]] > xs[order[k]]:
                    continue
                s_right = total - s_left
                score = s_left * s_left / nl + s_right * s_right / nr
                if score > fbest:
                    fbest = score
                    fk = k
            if fk >= 0 and fbest > best:
                best = fbest
                best_f = f
                best_t = 0.5 * (xs[order[fk]] + xs[order[fk + 1]])
        if best_f < 0:
            continue
        nl = 0
        for i in range(start, stop):
            r = idx[i]
            if X[r, best_f] <= best_t:
                idx[start + nl] = r
                nl += 1
            else:
                tmp[i - start - nl] = r
        for i in range(m - nl):
            idx[start + nl + i] = tmp[i]
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        mid = start + nl
        st_node[top] = n_nodes + 1
        st_start[top] = mid
        st_stop[top] = stop
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = n_nodes
        st_start[top] = start
        st_stop[top] = mid
        st_depth[top] = depth + 1
        top += 1
        n_nodes += 2
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(), value[:n_nodes].copy())


# --------------------------------------------------------------------------
# tree prediction

def predict_tree_numpy(X, feature, threshold, left, right, value):
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = feature[node] >= 0
    rows = np.arange(X.shape[0])
    while active.any():
        r = rows[active]
        nd = node[r]
        f = feature[nd]
        go_left = X[r, f] <= threshold[nd]
        node[r] = np.where(go_left, left[nd], right[nd])
        active[r] = feature[node[r]] >= 0
    return value[node]


def _predict_tree_loop(X, feature, threshold, left, right, value):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


if HAVE_NUMBA:
    pairwise_sq_dists_numba = njit(cache=True)(_pairwise_sq_dists_loop)
    grow_tree_numba = njit(cache=True)(_grow_tree_loop)
    predict_tree_numba = njit(cache=True)(_predict_tree_loop)
else:  # pragma: no cover - exercised only without numba
    pairwise_sq_dists_numba = None
    grow_tree_numba = None
    predict_tree_numba = None

if BACKEND == "numba":
    pairwise_sq_dists = pairwise_sq_dists_numba
    grow_tree = grow_tree_numba
    predict_tree = predict_tree_numba
else:
    pairwise_sq_dists = pairwise_sq_dists_numpy
    grow_tree = grow_tree_numpy
    predict_tree = predict_tree_numpy
