"""Slow, direct reference computations used as independent test oracles."""
import itertools
import math

import numpy as np


def brute_force_split(x, y, min_leaf=1, rtol=1e-10):
    """Exhaustive search over every (feature, midpoint) pair.

    SSE is recomputed from scratch on each side. Among splits whose decrease
    is within ``rtol`` of the best, the lowest (feature, threshold) wins.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n, p = x.shape
    parent = float(np.sum((y - y.mean()) ** 2))
    cands = []
    for f in range(p):
        vals = np.unique(x[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            s = (a + b) / 2
            left = x[:, f] <= s
            nl = int(left.sum())
            if nl < min_leaf or n - nl < min_leaf:
                continue
            yl, yr = y[left], y[~left]
            child = np.sum((yl - yl.mean()) ** 2) + np.sum((yr - yr.mean()) ** 2)
            cands.append((f, s, parent - child))
    if not cands:
        return None
    best = max(c[2] for c in cands)
    if best <= 1e-14 * max(parent, 1e-300):
        return None
    for f, s, d in sorted(cands, key=lambda c: (c[0], c[1])):
        if d >= best * (1 - rtol):
            return f, s, d


def walk_leaf(tree, row):
    """Root-to-leaf traversal in plain Python."""
    node = 0
    while tree.left[node] >= 0:
        if row[tree.feature[node]] <= tree.threshold[node]:
            node = tree.left[node]
        else:
            node = tree.right[node]
    return node


def ssi_literal(m1, m2):
    """Jaccard subgroup similarity by building both n x n coassignment
    matrices and counting ordered pairs per subgroup of the union."""
    m1 = np.asarray(m1)
    m2 = np.asarray(m2)
    n = len(m1)
    c1 = (m1[:, None] == m1[None, :]) & ~np.eye(n, dtype=bool)
    c2 = (m2[:, None] == m2[None, :]) & ~np.eye(n, dtype=bool)
    ratios = []
    for members in [m1 == g for g in np.unique(m1)] + [m2 == g for g in np.unique(m2)]:
        rows = np.flatnonzero(members)
        a = c1[rows]
        b = c2[rows]
        n11 = np.sum(a & b)
        mixed = np.sum(a ^ b)
        ratios.append(1.0 if n11 + mixed == 0 else n11 / (n11 + mixed))
    return float(np.mean(ratios)), ratios


def chi2_sf_df1(x):
    return math.erfc(math.sqrt(x / 2))


def normal_cdf(x):
    # independent of math.erf: Simpson quadrature of the density
    if x < -10:
        return 0.0
    k = 20000
    a = -10.0
    h = (x - a) / k
    xs = a + h * np.arange(k + 1)
    f = np.exp(-xs ** 2 / 2) / math.sqrt(2 * math.pi)
    wts = np.ones(k + 1)
    wts[1:-1:2] = 4
    wts[2:-1:2] = 2
    return float(h / 3 * np.sum(wts * f))


def all_pairs(n):
    return itertools.permutations(range(n), 2)
