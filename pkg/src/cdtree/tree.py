"""CART regression trees: greedy squared-loss growth, cost-complexity and
depth pruning, prediction, and text/JSON rendering.

Split thresholds are midpoints between adjacent distinct values, an
observation equal to the threshold goes to the left (``<=``) child, and ties
between equally good splits go to the lowest feature index, then the lowest
threshold.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from cdtree import _kernels
from cdtree.core import Direction, Rule
from cdtree.errors import DataError
from cdtree.rng import derive_rng

UNLIMITED_DEPTH = 10_000


@dataclass(frozen=True)
class TreeParams:
    """Pre-pruning controls; defaults follow rpart's.

    ``complexity`` is rpart's ``cp``: a split is only made when it lowers the
    training SSE by at least ``complexity`` times the root SSE.
    """

    min_leaf: int = 7
    min_split: int = 20
    max_depth: int | None = 30
    min_loss_decrease: float = 0.0
    max_thresholds_per_feature: int | None = None
    complexity: float = 0.0

    def __post_init__(self):
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.min_split < 2 * self.min_leaf:
            raise ValueError("min_split must be at least 2 * min_leaf")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_loss_decrease < 0 or self.complexity < 0:
            raise ValueError("loss-decrease thresholds must be >= 0")
        if self.max_thresholds_per_feature is not None and self.max_thresholds_per_feature < 1:
            raise ValueError("max_thresholds_per_feature must be >= 1")

    @property
    def depth_limit(self) -> int:
        return UNLIMITED_DEPTH if self.max_depth is None else self.max_depth


@dataclass(frozen=True)
class SplitCandidate:
    feature_index: int
    threshold: float
    loss_decrease: float


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Flat-array binary tree. ``left[i] < 0`` marks node ``i`` as a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    weight: np.ndarray
    sse: np.ndarray
    node_depth: np.ndarray
    n_features: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("feature", "threshold", "left", "right", "value", "count",
                     "weight", "sse", "node_depth"):
            arr = np.array(getattr(self, name), copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    @property
    def depth(self) -> int:
        return int(self.node_depth.max())

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    @property
    def leaves(self) -> np.ndarray:
        """Leaf node ids in depth-first, left-first order."""
        return np.array([i for i in self.walk() if self.left[i] < 0], dtype=np.int64)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.left < 0))

    @property
    def internal(self) -> np.ndarray:
        return np.flatnonzero(self.left >= 0)

    def decrease(self, node: int) -> float:
        if self.left[node] < 0:
            return 0.0
        return float(self.sse[node] - self.sse[self.left[node]] - self.sse[self.right[node]])

    def walk(self):
        """Node ids in depth-first pre-order, left child first."""
        stack = [0]
        while stack:
            node = stack.pop()
            yield node
            if self.left[node] >= 0:
                stack.append(int(self.right[node]))
                stack.append(int(self.left[node]))

    def rule(self, node: int, direction: Direction = Direction.LE) -> Rule:
        return Rule(int(self.feature[node]), direction, float(self.threshold[node]))

    def features_used(self) -> set[int]:
        return {int(f) for f in self.feature[self.left >= 0]}

    def apply(self, x) -> np.ndarray:
        x = _as_matrix(x, self.n_features)
        return _kernels.apply_kernel(self.feature, self.threshold, self.left, self.right, x)

    def predict(self, x) -> np.ndarray:
        return predict(self, x)

    def training_sse(self) -> float:
        return float(self.sse[self.left < 0].sum())

    def same_structure(self, other: "RegressionTree") -> bool:
        return (
            np.array_equal(self.left, other.left)
            and np.array_equal(self.right, other.right)
            and np.array_equal(self.feature, other.feature)
            and np.array_equal(self.threshold, other.threshold)
        )


def _as_matrix(x, p: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None] if p == 1 else x[None, :]
    if p is not None and x.shape[1] != p:
        raise DataError(f"expected {p} covariate columns, got {x.shape[1]}")
    return np.ascontiguousarray(x)


def _weights(sample_weight, n: int) -> np.ndarray:
    if sample_weight is None:
        return np.ones(n)
    w = np.asarray(sample_weight, dtype=np.float64)
    if w.shape != (n,):
        raise DataError("sample_weight must have one entry per row")
    if np.any(w < 0) or not np.any(w > 0):
        raise DataError("sample weights must be non-negative and not all zero")
    return np.ascontiguousarray(w)


def best_split(x_columns, targets, params: TreeParams = TreeParams(),
               sample_weight=None, seed: int = -1) -> SplitCandidate | None:
    """Best single split of the rows, or ``None`` if nothing admissible helps."""
    x = _as_matrix(x_columns)
    y = np.ascontiguousarray(targets, dtype=np.float64)
    n, p = x.shape
    if n < params.min_split:
        return None
    w = _weights(sample_weight, n)
    if seed >= 0:
        # only matters for the subsampled-threshold mode
        _kernels.seed_kernel(seed)
    f, thr, dec = _kernels.best_split_kernel(
        x, y, w, np.arange(n), 0, n, np.arange(p), params.min_leaf,
        params.max_thresholds_per_feature or 0, params.min_loss_decrease)
    if f < 0:
        return None
    return SplitCandidate(int(f), float(thr), float(dec))


def fit_tree(x, targets, params: TreeParams = TreeParams(), seed: int = 0, *,
             sample_weight=None, mtry: int | None = None) -> RegressionTree:
    """Grow a tree greedily on ``targets``.

    ``mtry`` restricts each split search to a random subset of features (used
    by forests); the seed only matters when ``mtry`` or
    ``max_thresholds_per_feature`` is set.
    """
    x = _as_matrix(x)
    y = np.ascontiguousarray(targets, dtype=np.float64)
    n, p = x.shape
    if y.shape != (n,):
        raise DataError("targets must have one entry per row")
    if not np.all(np.isfinite(y)):
        raise DataError("targets must be finite")
    w = _weights(sample_weight, n)
    mtry = p if mtry is None else int(mtry)
    if not 1 <= mtry <= p:
        raise ValueError("mtry must lie in [1, p]")
    min_decrease = params.min_loss_decrease
    if params.complexity > 0:
        _, mean, root_sse = _kernels._node_stats(y, w, np.arange(n), 0, n)
        min_decrease = max(min_decrease, params.complexity * root_sse)
    arrays = _kernels.grow_kernel(
        x, y, w, params.min_leaf, params.min_split, params.depth_limit, min_decrease,
        mtry, params.max_thresholds_per_feature or 0, int(seed) & 0x7FFFFFFF)
    return RegressionTree(*arrays, n_features=p)


def predict(tree: RegressionTree, x_rows) -> np.ndarray:
    x = _as_matrix(x_rows, tree.n_features)
    return _kernels.predict_kernel(tree.feature, tree.threshold, tree.left, tree.right,
                                   tree.value, x)


def _collapse(tree: RegressionTree, collapse: set[int]) -> RegressionTree:
    """Copy of ``tree`` with every node in ``collapse`` turned into a leaf.

    Nodes are renumbered in growth order (children numbered when their
    parent is visited, left subtree first), so collapsing nothing returns an
    identical tree.
    """
    src = [0]
    children: dict[int, tuple[int, int]] = {}
    stack = [(0, 0)]
    while stack:
        old, new = stack.pop()
        if tree.left[old] >= 0 and old not in collapse:
            lc, rc = len(src), len(src) + 1
            src.extend((int(tree.left[old]), int(tree.right[old])))
            children[new] = (lc, rc)
            stack.append((int(tree.right[old]), rc))
            stack.append((int(tree.left[old]), lc))
    src = np.array(src, dtype=np.int64)
    left = np.full(len(src), -1, dtype=np.int64)
    right = np.full(len(src), -1, dtype=np.int64)
    for new, (lc, rc) in children.items():
        left[new], right[new] = lc, rc
    feature = np.where(left >= 0, tree.feature[src], -1)
    threshold = np.where(left >= 0, tree.threshold[src], 0.0)
    return RegressionTree(feature, threshold, left, right, tree.value[src], tree.count[src],
                          tree.weight[src], tree.sse[src], tree.node_depth[src],
                          tree.n_features, dict(tree.meta))


def _subtree_stats(tree: RegressionTree):
    """Per node: summed leaf SSE of its subtree and its leaf count."""
    leaf_sse = np.zeros(tree.n_nodes)
    n_leaves = np.zeros(tree.n_nodes, dtype=np.int64)
    for node in reversed(list(tree.walk())):
        if tree.left[node] < 0:
            leaf_sse[node] = tree.sse[node]
            n_leaves[node] = 1
        else:
            l, r = tree.left[node], tree.right[node]
            leaf_sse[node] = leaf_sse[l] + leaf_sse[r]
            n_leaves[node] = n_leaves[l] + n_leaves[r]
    return leaf_sse, n_leaves


def _descendants(tree: RegressionTree, node: int) -> set[int]:
    out = set()
    stack = [node]
    while stack:
        k = stack.pop()
        out.add(k)
        if tree.left[k] >= 0:
            stack.extend((int(tree.left[k]), int(tree.right[k])))
    return out


def cost_complexity_path(tree: RegressionTree) -> list[tuple[float, RegressionTree]]:
    """Weakest-link pruning sequence ``[(alpha_k, T_k)]``.

    Costs are SSE divided by the root's total weight (n for unweighted
    fits), so ``alpha`` is the per-leaf penalty on mean squared error.
    Starts at ``(0, tree)`` and ends with the root-only tree.
    """
    total = float(tree.weight[0]) or 1.0
    path = [(0.0, tree)]
    current = tree
    alpha = 0.0
    while current.n_leaves > 1:
        leaf_sse, n_leaves = _subtree_stats(current)
        internal = current.internal
        g = (current.sse[internal] - leaf_sse[internal]) / total / (n_leaves[internal] - 1)
        g_min = float(g.min())
        alpha = max(alpha, g_min)
        weakest = internal[g <= g_min + 1e-12 * max(abs(g_min), 1e-300)]
        current = _collapse(current, {int(k) for k in weakest})
        path.append((alpha, current))
    return path


def prune_to_depth(tree: RegressionTree, d: int) -> RegressionTree:
    """Collapse every node at depth ``d`` into a leaf."""
    if d < 0:
        raise ValueError("depth must be >= 0")
    if tree.depth <= d:
        return tree
    cut = {int(k) for k in tree.internal if tree.node_depth[k] >= d}
    return _collapse(tree, cut)


def _fold_ids(n: int, folds: int, rng: np.random.Generator) -> np.ndarray:
    ids = np.arange(n) % folds
    return ids[rng.permutation(n)]


def prune_at(path: list[tuple[float, RegressionTree]], alpha: float) -> RegressionTree:
    """Smallest-alpha tree on ``path`` optimal at complexity ``alpha``."""
    chosen = path[0][1]
    for a, t in path:
        if a <= alpha * (1 + 1e-12):
            chosen = t
        else:
            break
    return chosen


def cv_prune(x, targets, params: TreeParams = TreeParams(), folds: int = 10,
             seed: int = 0, *, return_details: bool = False):
    """Grow a tree and prune it at the cross-validated complexity.

    Candidate complexities are the geometric means of consecutive alphas on
    the full-data pruning path. The one with the lowest mean held-out squared
    error wins; ties go to the larger alpha (smaller tree).
    """
    x = _as_matrix(x)
    y = np.asarray(targets, dtype=np.float64)
    n = x.shape[0]
    if n < folds:
        raise DataError(f"need at least {folds} rows for {folds}-fold cross-validation")
    full = fit_tree(x, y, params, seed)
    path = cost_complexity_path(full)
    if len(path) == 1:
        return (full, {"alphas": [0.0], "cv_error": [np.nan], "chosen": 0}) if return_details else full
    alphas = np.array([a for a, _ in path])
    betas = np.empty_like(alphas)
    betas[:-1] = np.sqrt(alphas[:-1] * alphas[1:])
    betas[-1] = alphas[-1]
    rng = derive_rng(seed, "cv_prune")
    fold = _fold_ids(n, folds, rng)
    err = np.zeros(len(path))
    for k in range(folds):
        test = fold == k
        fold_tree = fit_tree(x[~test], y[~test], params, seed)
        fold_path = cost_complexity_path(fold_tree)
        for j, beta in enumerate(betas):
            pred = predict(prune_at(fold_path, beta), x[test])
            err[j] += np.sum((y[test] - pred) ** 2)
    err /= n
    best = 0
    for j in range(1, len(err)):
        if err[j] <= err[best] * (1 + 1e-12) + 1e-300:
            best = j
    chosen = path[best][1]
    if return_details:
        return chosen, {"alphas": alphas.tolist(), "cv_error": err.tolist(), "chosen": best}
    return chosen


# ---------------------------------------------------------------- rendering

def to_json(tree: RegressionTree, feature_names: Sequence[str] | None = None) -> dict:
    """Nested node dictionaries: ``rule``/``decrease``/``left``/``right`` on
    internal nodes, ``mean``/``count`` everywhere."""

    def build(node: int) -> dict:
        out = {"mean": float(tree.value[node]), "count": int(tree.count[node])}
        if tree.left[node] >= 0:
            f = int(tree.feature[node])
            out["rule"] = {
                "feature": f,
                "name": feature_names[f] if feature_names is not None else f"X{f + 1}",
                "direction": Direction.LE.value,
                "threshold": float(tree.threshold[node]),
            }
            out["decrease"] = tree.decrease(node)
            out["left"] = build(int(tree.left[node]))
            out["right"] = build(int(tree.right[node]))
        return out

    return build(0)


def from_json(doc: dict, n_features: int) -> RegressionTree:
    """Rebuild a tree (structure, means and counts) from :func:`to_json` output.

    Leaf SSEs are unknown and set to zero; internal SSEs are rebuilt from the
    recorded decreases, so ``decrease(node)`` survives the round trip.
    """
    docs = [doc]
    depth = [0]
    left = [-1]
    right = [-1]
    stack = [0]
    while stack:
        i = stack.pop()
        node = docs[i]
        if "rule" not in node:
            continue
        lc, rc = len(docs), len(docs) + 1
        docs.extend((node["left"], node["right"]))
        depth.extend((depth[i] + 1, depth[i] + 1))
        left.extend((-1, -1))
        right.extend((-1, -1))
        left[i], right[i] = lc, rc
        stack.append(rc)
        stack.append(lc)
    n = len(docs)
    feature = np.array([d["rule"]["feature"] if "rule" in d else -1 for d in docs])
    threshold = np.array([d["rule"]["threshold"] if "rule" in d else 0.0 for d in docs])
    value = np.array([d["mean"] for d in docs], dtype=float)
    count = np.array([d["count"] for d in docs], dtype=np.int64)
    sse = np.zeros(n)
    for i in reversed(range(n)):
        if left[i] >= 0:
            sse[i] = sse[left[i]] + sse[right[i]] + docs[i]["decrease"]
    return RegressionTree(feature, threshold, np.array(left), np.array(right), value, count,
                          count.astype(float), sse, np.array(depth), n_features)


def to_text(tree: RegressionTree, feature_names: Sequence[str] | None = None,
            leaf_text=None) -> str:
    """Indented rendering; ``leaf_text(node)`` may replace the default
    ``mean=..., n=...`` leaf annotation."""
    lines = []

    def name(f):
        return feature_names[f] if feature_names is not None else f"X{f + 1}"

    def visit(node: int, indent: str):
        if tree.left[node] < 0:
            text = leaf_text(node) if leaf_text else (
                f"mean={tree.value[node]:.4g}, n={int(tree.count[node])}")
            lines.append(f"{indent}-> {text}")
            return
        f, s = int(tree.feature[node]), float(tree.threshold[node])
        lines.append(f"{indent}{name(f)} <= {s:.6g}")
        visit(int(tree.left[node]), indent + "    ")
        lines.append(f"{indent}{name(f)} > {s:.6g}")
        visit(int(tree.right[node]), indent + "    ")

    if tree.left[0] < 0:
        lines.append("(root) " + (leaf_text(0) if leaf_text else
                                  f"mean={tree.value[0]:.4g}, n={int(tree.count[0])}"))
    else:
        visit(0, "")
    return "\n".join(lines)
