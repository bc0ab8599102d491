"""Compiled inner loops for tree growth, routing and path attribution.

Trees are stored as flat arrays indexed by node id (breadth-first, root 0).
Leaves carry ``feature == -1``.
"""

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True, nogil=True)
def _score(g, h, lam):
    denom = h + lam
    if denom <= 0.0:
        # 0/0 with lambda = 0 and an empty side
        return 0.0
    return g * g / denom


@njit(cache=True, nogil=True)
def grow_tree(X, order, G, H, eta, lam, max_depth, min_child_weight, gain_eps):
    """Exact greedy level-wise growth.

    ``order[:, j]`` holds the row indices sorted by ``X[:, j]`` (stable).
    Returns node arrays (feature, threshold, left, right, value, cover,
    grad_sum, count, gain, depth) trimmed to the number of nodes grown.
    """
    n, p = X.shape
    cap = 2 * n - 1
    full = (1 << (max_depth + 1)) - 1 if max_depth < 62 else cap
    if full < cap:
        cap = full

    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    cover = np.zeros(cap)
    grad_sum = np.zeros(cap)
    count = np.zeros(cap, dtype=np.int64)
    gain = np.zeros(cap)
    depth = np.zeros(cap, dtype=np.int64)

    node_of = np.zeros(n, dtype=np.int64)
    level_start = 0
    level_end = 1
    n_nodes = 1
    d = 0
    while level_start < level_end:
        width = level_end - level_start
        # node sums in row order
        for i in range(n):
            nd = node_of[i]
            if nd >= level_start:
                grad_sum[nd] += G[i]
                cover[nd] += H[i]
                count[nd] += 1
        for nd in range(level_start, level_end):
            value[nd] = -eta * grad_sum[nd] / (cover[nd] + lam) if cover[nd] + lam > 0.0 else 0.0
            depth[nd] = d
        if d >= max_depth:
            break

        best_gain = np.full(width, gain_eps)
        best_feat = np.full(width, LEAF, dtype=np.int64)
        best_thr = np.zeros(width)
        gl = np.zeros(width)
        hl = np.zeros(width)
        last = np.zeros(width)
        seen = np.zeros(width, dtype=np.bool_)
        for j in range(p):
            gl[:] = 0.0
            hl[:] = 0.0
            seen[:] = False
            for r in range(n):
                i = order[r, j]
                nd = node_of[i]
                if nd < level_start:
                    continue
                loc = nd - level_start
                v = X[i, j]
                if seen[loc] and v != last[loc]:
                    hr = cover[nd] - hl[loc]
                    if hl[loc] >= min_child_weight and hr >= min_child_weight:
                        gr = grad_sum[nd] - gl[loc]
                        cand = (
                            _score(gl[loc], hl[loc], lam)
                            + _score(gr, hr, lam)
                            - _score(grad_sum[nd], cover[nd], lam)
                        )
                        if cand > best_gain[loc]:
                            best_gain[loc] = cand
                            best_feat[loc] = j
                            thr = last[loc] + (v - last[loc]) / 2.0
                            if thr <= last[loc]:
                                thr = v
                            best_thr[loc] = thr
                gl[loc] += G[i]
                hl[loc] += H[i]
                last[loc] = v
                seen[loc] = True

        next_start = n_nodes
        for loc in range(width):
            if best_feat[loc] == LEAF:
                continue
            nd = level_start + loc
            feature[nd] = best_feat[loc]
            threshold[nd] = best_thr[loc]
            left[nd] = n_nodes
            right[nd] = n_nodes + 1
            n_nodes += 2
        for i in range(n):
            nd = node_of[i]
            if nd < level_start or feature[nd] == LEAF:
                node_of[i] = -1
                continue
            if X[i, feature[nd]] < threshold[nd]:
                node_of[i] = left[nd]
            else:
                node_of[i] = right[nd]
        level_start = next_start
        level_end = n_nodes
        d += 1

    # gains from the exact child sums
    for nd in range(n_nodes):
        if feature[nd] != LEAF:
            a = left[nd]
            b = right[nd]
            gain[nd] = (
                _score(grad_sum[a], cover[a], lam)
                + _score(grad_sum[b], cover[b], lam)
                - _score(grad_sum[nd], cover[nd], lam)
            )
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        cover[:n_nodes].copy(),
        grad_sum[:n_nodes].copy(),
        count[:n_nodes].copy(),
        gain[:n_nodes].copy(),
        depth[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def apply_tree(X, feature, threshold, left, right):
    """Leaf id reached by every row."""
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        nd = 0
        while feature[nd] != LEAF:
            if X[i, feature[nd]] < threshold[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[i] = nd
    return out


@njit(cache=True, nogil=True)
def predict_tree(X, feature, threshold, left, right, value, out):
    """Add the tree's output to ``out`` in place."""
    n = X.shape[0]
    for i in range(n):
        nd = 0
        while feature[nd] != LEAF:
            if X[i, feature[nd]] < threshold[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[i] += value[nd]


@njit(cache=True, nogil=True)
def path_contributions(X, feature, threshold, left, right, node_value, out):
    """Add each split's change in node value to the split feature, in place.

    ``out`` is n x p. ``node_value`` may be any per-node value vector.
    """
    n = X.shape[0]
    for i in range(n):
        nd = 0
        while feature[nd] != LEAF:
            k = feature[nd]
            if X[i, k] < threshold[nd]:
                child = left[nd]
            else:
                child = right[nd]
            out[i, k] += node_value[child] - node_value[nd]
            nd = child


@njit(cache=True, nogil=True)
def path_inner(X, weights, feature, threshold, left, right, node_value, out):
    """``out[k] += sum_i weights[i] * r_k(x_i)`` without materializing ``r``."""
    n = X.shape[0]
    for i in range(n):
        w = weights[i]
        nd = 0
        while feature[nd] != LEAF:
            k = feature[nd]
            if X[i, k] < threshold[nd]:
                child = left[nd]
            else:
                child = right[nd]
            out[k] += w * (node_value[child] - node_value[nd])
            nd = child


@njit(cache=True, nogil=True)
def node_sums(X, G, H, feature, threshold, left, right, n_nodes):
    """Per-node (sum G, sum H, row count) along every row's path."""
    gs = np.zeros(n_nodes)
    hs = np.zeros(n_nodes)
    cnt = np.zeros(n_nodes, dtype=np.int64)
    n = X.shape[0]
    for i in range(n):
        nd = 0
        while True:
            gs[nd] += G[i]
            hs[nd] += H[i]
            cnt[nd] += 1
            if feature[nd] == LEAF:
                break
            if X[i, feature[nd]] < threshold[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
    return gs, hs, cnt
