"""Numba kernels for CART growth and traversal.

Growth uses an explicit stack over a shared row-index buffer, Gini impurity
with midpoint thresholds between consecutive distinct values, and an optional
per-split random feature subset driven by a self-contained splitmix64 stream
(so results do not depend on numba's RNG support and are stable across
processes).
"""
from __future__ import annotations

import numpy as np
from numba import njit

_SPLITMIX_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True)
def _next_u64(state):
    state = state + _SPLITMIX_GAMMA
    z = state
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True)
def grow_tree(X, y, n_classes, max_depth, min_samples_split, subset_size, seed):
    """Build a CART on (X, y); returns node arrays and the node count.

    feature[i] == -1 marks a leaf. counts[i] holds the training class counts
    of every node (leaves are what prediction uses).
    """
    n, d = X.shape
    max_nodes = 2 * n + 1
    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    counts = np.zeros((max_nodes, n_classes), np.float64)

    idx = np.arange(n)
    tmp = np.empty(n, np.int64)
    vals = np.empty(n, np.float64)
    perm = np.arange(d)
    cnt = np.zeros(n_classes, np.int64)
    left_cnt = np.zeros(n_classes, np.int64)

    stack_node = np.empty(max_nodes, np.int64)
    stack_start = np.empty(max_nodes, np.int64)
    stack_end = np.empty(max_nodes, np.int64)
    stack_depth = np.empty(max_nodes, np.int64)

    state = np.uint64(seed)
    n_nodes = 1
    top = 0
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = n
    stack_depth[0] = 0

    while top >= 0:
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        top -= 1
        n_node = end - start

        for c in range(n_classes):
            cnt[c] = 0
        for t in range(start, end):
            cnt[y[idx[t]]] += 1
        for c in range(n_classes):
            counts[node, c] = cnt[c]

        sumsq = 0.0
        top_count = 0
        for c in range(n_classes):
            sumsq += cnt[c] * cnt[c]
            if cnt[c] > top_count:
                top_count = cnt[c]
        if (
            depth >= max_depth
            or n_node < min_samples_split
            or top_count == n_node
        ):
            continue

        n_try = subset_size if subset_size < d else d
        if n_try < d:
            for t in range(n_try):
                state, z = _next_u64(state)
                j = t + np.int64(z % np.uint64(d - t))
                swap = perm[t]
                perm[t] = perm[j]
                perm[j] = swap

        parent_score = sumsq / n_node
        best_score = parent_score + 1e-12
        best_feat = np.int64(-1)
        best_thr = 0.0
        for fpos in range(n_try):
            f = perm[fpos] if n_try < d else np.int64(fpos)
            for t in range(n_node):
                vals[t] = X[idx[start + t], f]
            order = np.argsort(vals[:n_node])
            for c in range(n_classes):
                left_cnt[c] = 0
            sql = 0.0
            sqr = sumsq
            nl = 0
            nr = n_node
            for t in range(n_node - 1):
                c = y[idx[start + order[t]]]
                sql += 2.0 * left_cnt[c] + 1.0
                left_cnt[c] += 1
                rc = cnt[c] - left_cnt[c]
                sqr -= 2.0 * rc + 1.0
                nl += 1
                nr -= 1
                v0 = vals[order[t]]
                v1 = vals[order[t + 1]]
                if v1 > v0:
                    score = sql / nl + sqr / nr
                    if score > best_score:
                        best_score = score
                        best_feat = f
                        best_thr = 0.5 * (v0 + v1)

        if best_feat < 0:
            continue

        n_left = 0
        for t in range(n_node):
            if X[idx[start + t], best_feat] <= best_thr:
                n_left += 1
        if n_left == 0 or n_left == n_node:
            # midpoint collapsed onto a sample value at float resolution
            continue
        pos_l = 0
        pos_r = n_left
        for t in range(n_node):
            row = idx[start + t]
            if X[row, best_feat] <= best_thr:
                tmp[pos_l] = row
                pos_l += 1
            else:
                tmp[pos_r] = row
                pos_r += 1
        for t in range(n_node):
            idx[start + t] = tmp[t]

        node_l = n_nodes
        node_r = n_nodes + 1
        n_nodes += 2
        feature[node] = best_feat
        threshold[node] = best_thr
        left[node] = node_l
        right[node] = node_r

        top += 1
        stack_node[top] = node_l
        stack_start[top] = start
        stack_end[top] = start + n_left
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = node_r
        stack_start[top] = start + n_left
        stack_end[top] = end
        stack_depth[top] = depth + 1

    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], counts[:n_nodes], n_nodes


@njit(cache=True)
def apply_tree(feature, threshold, left, right, X):
    """Leaf node index for every row of X."""
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        nid = 0
        while feature[nid] >= 0:
            if X[i, feature[nid]] <= threshold[nid]:
                nid = left[nid]
            else:
                nid = right[nid]
        out[i] = nid
    return out
