"""Compiled inner loops for CART growth and prediction.

Trees are stored as flat arrays indexed by node id. Node 0 is the root,
``left[i] == -1`` marks a leaf, and ``sse`` holds the weighted sum of
squared deviations of the training targets reaching each node.
"""
import numpy as np
from numba import njit

# relative margin a candidate split must beat the incumbent by; keeps the
# lowest (feature, threshold) on floating-point ties
TIE_RTOL = 1e-10


@njit(cache=True)
def seed_kernel(seed):
    np.random.seed(seed)


@njit(cache=True, nogil=True)
def _node_stats(y, w, idx, start, end):
    sw = 0.0
    swy = 0.0
    for k in range(start, end):
        i = idx[k]
        sw += w[i]
        swy += w[i] * y[i]
    mean = swy / sw if sw > 0 else 0.0
    sse = 0.0
    for k in range(start, end):
        i = idx[k]
        d = y[i] - mean
        sse += w[i] * d * d
    return sw, mean, sse


@njit(cache=True, nogil=True)
def _negligible(sse, sw, mean):
    # constant targets leave roundoff-level SSE, e.g. mean(4.2, ..., 4.2) != 4.2
    return sse <= 1e-20 * sw * (1.0 + mean * mean)


@njit(cache=True, nogil=True)
def _search_feature(x, y, w, idx, start, end, f, mean, sw, min_leaf, max_thr,
                    best_dec, best_f, best_thr, best_pos):
    m = end - start
    vals = np.empty(m)
    for k in range(m):
        vals[k] = x[idx[start + k], f]
    order = np.argsort(vals, kind="mergesort")
    xs = vals[order]
    # admissible split positions: left = first k+1 sorted rows
    lo = min_leaf - 1
    hi = m - min_leaf - 1
    if hi < lo:
        return best_dec, best_f, best_thr, best_pos, order
    cand = np.empty(hi - lo + 1, dtype=np.int64)
    nc = 0
    for k in range(lo, hi + 1):
        if xs[k] < xs[k + 1]:
            cand[nc] = k
            nc += 1
    if nc == 0:
        return best_dec, best_f, best_thr, best_pos, order
    cand = cand[:nc]
    if max_thr > 0 and nc > max_thr:
        np.random.shuffle(cand)
        cand = np.sort(cand[:max_thr])
        nc = max_thr
    wl = 0.0
    sl = 0.0
    j = 0
    for k in range(hi + 1):
        i = idx[start + order[k]]
        wl += w[i]
        sl += w[i] * (y[i] - mean)
        if j >= nc:
            break
        if k != cand[j]:
            continue
        j += 1
        wr = sw - wl
        if wl <= 0.0 or wr <= 0.0:
            continue
        # weighted SSE decrease = wl*wr/sw * (mean_l - mean_r)^2
        diff = sl / wl - (-sl) / wr
        dec = wl * wr / sw * diff * diff
        if dec > best_dec * (1.0 + TIE_RTOL) or (best_f < 0 and dec > 0.0):
            thr = 0.5 * (xs[k] + xs[k + 1])
            if thr >= xs[k + 1]:
                thr = xs[k]
            best_dec = dec
            best_f = f
            best_thr = thr
            best_pos = k
    return best_dec, best_f, best_thr, best_pos, order


@njit(cache=True, nogil=True)
def best_split_kernel(x, y, w, idx, start, end, features, min_leaf, max_thr, min_decrease):
    """Best (feature, threshold, decrease) for rows ``idx[start:end]``.

    Returns feature -1 when no admissible split has positive decrease at
    least ``min_decrease``.
    """
    sw, mean, sse = _node_stats(y, w, idx, start, end)
    best_dec = 0.0
    best_f = -1
    best_thr = 0.0
    best_pos = -1
    if sw <= 0.0 or _negligible(sse, sw, mean):
        return -1, 0.0, 0.0
    for f in features:
        best_dec, best_f, best_thr, best_pos, _ = _search_feature(
            x, y, w, idx, start, end, f, mean, sw, min_leaf, max_thr,
            best_dec, best_f, best_thr, best_pos)
    if best_f < 0 or best_dec < min_decrease or best_dec <= 1e-14 * sse:
        return -1, 0.0, 0.0
    return best_f, best_thr, best_dec


@njit(cache=True, nogil=True)
def grow_kernel(x, y, w, min_leaf, min_split, max_depth, min_decrease, mtry, max_thr, seed):
    n, p = x.shape
    if seed >= 0:
        np.random.seed(seed)
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, dtype=np.int64)
    weight = np.zeros(cap)
    sse = np.zeros(cap)
    node_depth = np.zeros(cap, dtype=np.int64)

    idx = np.arange(n)
    buf = np.empty(n, dtype=np.int64)
    all_features = np.arange(p)
    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        sw, mean, s = _node_stats(y, w, idx, start, end)
        value[node] = mean
        count[node] = end - start
        weight[node] = sw
        sse[node] = s
        d = node_depth[node]
        if end - start < min_split or d >= max_depth or _negligible(s, sw, mean):
            continue
        if mtry < p:
            feats = np.sort(np.random.permutation(p)[:mtry])
        else:
            feats = all_features
        f, thr, dec = best_split_kernel(x, y, w, idx, start, end, feats, min_leaf,
                                        max_thr, min_decrease)
        if f < 0:
            continue
        # stable partition: LE rows first
        nl = 0
        for k in range(start, end):
            if x[idx[k], f] <= thr:
                buf[nl] = idx[k]
                nl += 1
        nr = 0
        for k in range(start, end):
            if x[idx[k], f] > thr:
                buf[nl + nr] = idx[k]
                nr += 1
        for k in range(nl + nr):
            idx[start + k] = buf[k]
        feature[node] = f
        threshold[node] = thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        node_depth[lc] = d + 1
        node_depth[rc] = d + 1
        # right pushed first so the left subtree is grown first
        st_node[top] = rc
        st_start[top] = start + nl
        st_end[top] = end
        top += 1
        st_node[top] = lc
        st_start[top] = start
        st_end[top] = start + nl
        top += 1
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], count[:n_nodes], weight[:n_nodes], sse[:n_nodes],
            node_depth[:n_nodes])


@njit(cache=True, nogil=True)
def apply_kernel(feature, threshold, left, right, x):
    n = x.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while left[node] >= 0:
            if x[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True, nogil=True)
def predict_kernel(feature, threshold, left, right, value, x):
    leaves = apply_kernel(feature, threshold, left, right, x)
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = value[leaves[i]]
    return out
