"""Compiled kernels for exact-split regression trees.

Each node owns the slice ``[start, end)`` of a per-feature index buffer whose
rows are sorted by that feature, so a node is scanned in one pass per feature
and a split is a stable partition of every buffer row.
"""

import numba
import numpy as np

# relative slack under which two split gains count as equal
GAIN_TIE_RTOL = 1e-9
# a split must improve the node by more than this fraction of its sum of squares
MIN_GAIN_RTOL = 1e-12


@numba.njit(cache=True)
def bag_sorted_index(order, feats, in_bag, n_bag):
    """Rows of ``order[:, f]`` restricted to the bag, one buffer row per feature."""
    n = order.shape[0]
    out = np.empty((feats.shape[0], n_bag), dtype=np.int64)
    for s in range(feats.shape[0]):
        f = feats[s]
        k = 0
        for i in range(n):
            r = order[i, f]
            if in_bag[r]:
                out[s, k] = r
                k += 1
    return out


@numba.njit(cache=True)
def _same(a, b):
    if np.isnan(a):
        return np.isnan(b)
    return a == b


@numba.njit(cache=True)
def _threshold(a, b):
    # b may be NaN (missing goes right), otherwise midpoint between a and b
    if np.isnan(b):
        return a
    mid = 0.5 * (a + b)
    if mid >= b or mid < a:
        return a
    return mid


@numba.njit(cache=True)
def _best_split(X, resid, idx, feats, start, end, min_child, lam):
    """Best (gain, slot, position) for the node; gain 0 means no split."""
    n = end - start
    g_total = 0.0
    sq_total = 0.0
    for i in range(start, end):
        v = resid[idx[0, i]]
        g_total += v
        sq_total += v * v
    parent = g_total * g_total / (n + lam)
    floor_gain = MIN_GAIN_RTOL * sq_total
    best_gain = 0.0
    best_slot = -1
    best_pos = -1
    if n < 2 * min_child:
        return best_gain, best_slot, best_pos
    for s in range(feats.shape[0]):
        f = feats[s]
        gl = 0.0
        for i in range(start, end - 1):
            row = idx[s, i]
            gl += resid[row]
            nl = i - start + 1
            nr = n - nl
            if nl < min_child:
                continue
            if nr < min_child:
                break
            if _same(X[row, f], X[idx[s, i + 1], f]):
                continue
            gr = g_total - gl
            gain = gl * gl / (nl + lam) + gr * gr / (nr + lam) - parent
            if gain <= floor_gain:
                continue
            if best_slot < 0 or gain > best_gain * (1.0 + GAIN_TIE_RTOL):
                best_gain = gain
                best_slot = s
                best_pos = i
    return best_gain, best_slot, best_pos


@numba.njit(cache=True)
def build_tree(X, resid, idx, feats, num_leaves, min_child, lam):
    """Grow one leaf-wise tree. ``idx`` is consumed (partitioned in place).

    Returns (feature, threshold, left, right, value, gain, count, n_nodes).
    """
    n_rows_total = X.shape[0]
    n = idx.shape[1]
    n_slots = idx.shape[0]
    max_nodes = 2 * num_leaves - 1
    feature = np.full(max_nodes, -1, dtype=np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    value = np.zeros(max_nodes)
    gain = np.zeros(max_nodes)
    count = np.zeros(max_nodes, dtype=np.int64)
    start = np.zeros(max_nodes, dtype=np.int64)
    end = np.zeros(max_nodes, dtype=np.int64)
    cand_gain = np.zeros(max_nodes)
    cand_slot = np.full(max_nodes, -1, dtype=np.int64)
    cand_pos = np.full(max_nodes, -1, dtype=np.int64)
    is_leaf = np.zeros(max_nodes, dtype=np.bool_)
    goes_left = np.zeros(n_rows_total, dtype=np.bool_)
    tmp = np.empty(n, dtype=np.int64)

    start[0] = 0
    end[0] = n
    is_leaf[0] = True
    n_nodes = 1
    if n_slots > 0:
        cand_gain[0], cand_slot[0], cand_pos[0] = _best_split(
            X, resid, idx, feats, 0, n, min_child, lam
        )
    n_leaves = 1
    while n_leaves < num_leaves:
        pick = -1
        for node in range(n_nodes):
            if is_leaf[node] and cand_slot[node] >= 0:
                if pick < 0 or cand_gain[node] > cand_gain[pick] * (1.0 + GAIN_TIE_RTOL):
                    pick = node
        if pick < 0:
            break
        s_star = cand_slot[pick]
        p = cand_pos[pick]
        a = start[pick]
        b = end[pick]
        f = feats[s_star]
        feature[pick] = f
        threshold[pick] = _threshold(X[idx[s_star, p], f], X[idx[s_star, p + 1], f])
        gain[pick] = cand_gain[pick]
        for i in range(a, p + 1):
            goes_left[idx[s_star, i]] = True
        n_left = p + 1 - a
        for s in range(n_slots):
            kl = 0
            kr = n_left
            for i in range(a, b):
                r = idx[s, i]
                if goes_left[r]:
                    tmp[kl] = r
                    kl += 1
                else:
                    tmp[kr] = r
                    kr += 1
            for i in range(b - a):
                idx[s, a + i] = tmp[i]
        for i in range(a, a + n_left):
            goes_left[idx[0, i]] = False

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[pick] = lc
        right[pick] = rc
        is_leaf[pick] = False
        start[lc] = a
        end[lc] = a + n_left
        start[rc] = a + n_left
        end[rc] = b
        is_leaf[lc] = True
        is_leaf[rc] = True
        cand_gain[lc], cand_slot[lc], cand_pos[lc] = _best_split(
            X, resid, idx, feats, start[lc], end[lc], min_child, lam
        )
        cand_gain[rc], cand_slot[rc], cand_pos[rc] = _best_split(
            X, resid, idx, feats, start[rc], end[rc], min_child, lam
        )
        n_leaves += 1

    for node in range(n_nodes):
        count[node] = end[node] - start[node]
        if is_leaf[node]:
            g = 0.0
            if n_slots > 0:
                for i in range(start[node], end[node]):
                    g += resid[idx[0, i]]
            value[node] = g / (count[node] + lam) if count[node] + lam > 0 else 0.0
    return feature, threshold, left, right, value, gain, count, n_nodes


@numba.njit(cache=True)
def predict_tree(X, feature, threshold, left, right, value):
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
