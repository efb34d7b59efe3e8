"""First-stage CATE models ("teachers").

Each teacher returns one out-of-sample effect prediction per training unit:

* ``T_LEARNER_FOREST``: a bagged forest per arm; a unit's own-arm outcome
  comes from trees whose bootstrap sample missed it.
* ``S_LEARNER_GBT`` / ``R_LEARNER_GBT``: boosted trees with repeated
  two-fold cross-fitting; each unit's prediction is the average over repeats
  of the model fit on the half that excluded it.
* ``NOISE_TEACHER``: a seeded permutation of the T-learner output. It keeps
  the marginal distribution and destroys any link to X, which makes it a
  negative control for teacher selection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from cdtree.core import Dataset
from cdtree.errors import EstimationError
from cdtree.inference import PROPENSITY_CLIP, logistic_irls, predict_propensity
from cdtree.parallel import pmap
from cdtree.rng import derive_int, derive_rng
from cdtree.tree import RegressionTree, TreeParams, fit_tree, predict

MAX_SPLIT_TRIES = 100


# ---------------------------------------------------------------- forests

@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    mtry: int | None = None
    sample_fraction: float = 1.0
    replace: bool = True
    tree: TreeParams = TreeParams(min_leaf=5, min_split=10, max_depth=None)
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0 < self.sample_fraction <= 1 and self.replace is False:
            raise ValueError("sample_fraction must lie in (0, 1] without replacement")
        if self.sample_fraction <= 0:
            raise ValueError("sample_fraction must be positive")

    def resolved_mtry(self, p: int) -> int:
        m = math.ceil(p / 3) if self.mtry is None else self.mtry
        if not 1 <= m <= p:
            raise ValueError(f"mtry={m} outside [1, {p}]")
        return m


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple[RegressionTree, ...]
    inbag: np.ndarray  # (n_trees, n) bootstrap multiplicities
    train_pred: np.ndarray  # (n_trees, n) per-tree predictions on training rows

    def predict(self, x) -> np.ndarray:
        return np.mean([predict(t, x) for t in self.trees], axis=0)

    def oob_predict(self) -> tuple[np.ndarray, np.ndarray]:
        """Out-of-bag training predictions and a flag per unit.

        The flag marks units that were in every bootstrap sample; they get the
        all-tree mean instead.
        """
        out = self.inbag == 0
        n_out = out.sum(axis=0)
        flagged = n_out == 0
        oob = np.where(out, self.train_pred, 0.0).sum(axis=0) / np.maximum(n_out, 1)
        allmean = self.train_pred.mean(axis=0)
        return np.where(flagged, allmean, oob), flagged


def fit_forest(x, targets, params: ForestParams = ForestParams(),
               threads: int | None = None) -> Forest:
    x = np.ascontiguousarray(x, dtype=float)
    y = np.asarray(targets, dtype=float)
    n, p = x.shape
    if n < 2:
        raise EstimationError("a forest needs at least 2 rows")
    mtry = params.resolved_mtry(p)
    size = max(1, int(round(params.sample_fraction * n)))

    def grow(b: int):
        rng = derive_rng(params.seed, "forest", b)
        rows = rng.choice(n, size=size, replace=params.replace)
        counts = np.bincount(rows, minlength=n)
        tree = fit_tree(x[rows], y[rows], params.tree, derive_int(params.seed, "split", b),
                        mtry=mtry)
        return tree, counts, predict(tree, x)

    grown = pmap(grow, range(params.n_trees), threads)
    return Forest(tuple(g[0] for g in grown), np.array([g[1] for g in grown]),
                  np.array([g[2] for g in grown]))


# ---------------------------------------------------------------- boosting

@dataclass(frozen=True)
class GbtParams:
    n_rounds: int = 200
    learning_rate: float = 0.1
    max_depth: int = 3
    subsample: float = 1.0
    min_leaf: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class BoostedModel:
    init: float
    trees: tuple[RegressionTree, ...]
    learning_rate: float
    train_loss: tuple[float, ...]

    def predict(self, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=float)
        out = np.full(x.shape[0], self.init)
        for t in self.trees:
            out += self.learning_rate * predict(t, x)
        return out


def fit_gbt(x, targets, params: GbtParams = GbtParams(), sample_weights=None) -> BoostedModel:
    """Least-squares gradient boosting with shrinkage.

    Starts from the weighted mean and fits each round's tree to the current
    residuals under the same weights. Training loss (weighted MSE) is
    recorded per round.
    """
    x = np.ascontiguousarray(x, dtype=float)
    y = np.asarray(targets, dtype=float)
    n = x.shape[0]
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("sample weights must be non-negative and not all zero")
    init = float(np.sum(w * y) / np.sum(w))
    tree_params = TreeParams(min_leaf=params.min_leaf, min_split=2 * params.min_leaf,
                             max_depth=params.max_depth)
    rng = derive_rng(params.seed, "gbt")
    f = np.full(n, init)
    trees = []
    losses = []
    m = max(1, int(round(params.subsample * n)))
    for k in range(params.n_rounds):
        resid = y - f
        if params.subsample < 1:
            rows = np.sort(rng.choice(n, size=m, replace=False))
            if not np.any(w[rows] > 0):
                rows = np.arange(n)
        else:
            rows = slice(None)
        tree = fit_tree(x[rows], resid[rows], tree_params, sample_weight=w[rows])
        f = f + params.learning_rate * predict(tree, x)
        trees.append(tree)
        losses.append(float(np.sum(w * (y - f) ** 2) / np.sum(w)))
    return BoostedModel(init, tuple(trees), params.learning_rate, tuple(losses))


# ---------------------------------------------------------------- teachers

class TeacherKind(str, Enum):
    T_LEARNER_FOREST = "t-forest"
    S_LEARNER_GBT = "s-gbt"
    R_LEARNER_GBT = "r-gbt"
    NOISE_TEACHER = "noise"


ESTIMATE = "estimate"


@dataclass(frozen=True)
class TeacherSpec:
    """Teacher model choice and settings.

    ``propensity`` is a known constant in (0, 1) or ``"estimate"`` (logistic
    regression, cross-fitted like the outcome model). It is only used by the
    R-learner.
    """

    kind: TeacherKind = TeacherKind.T_LEARNER_FOREST
    forest: ForestParams = ForestParams()
    gbt: GbtParams = GbtParams()
    propensity: float | str = 0.5
    randomized: bool = True
    crossfit_repeats: int = 50
    nuisance_folds: int = 5

    def __post_init__(self):
        object.__setattr__(self, "kind", TeacherKind(self.kind))
        if self.propensity != ESTIMATE:
            e = float(self.propensity)
            if not 0 < e < 1:
                raise ValueError("known propensity must lie in (0, 1)")
        elif self.randomized:
            raise ValueError("a randomized design needs a known propensity constant")
        if self.crossfit_repeats < 1:
            raise ValueError("crossfit_repeats must be >= 1")
        if self.nuisance_folds < 2:
            raise ValueError("nuisance_folds must be >= 2")

    @property
    def name(self) -> str:
        return self.kind.value

    def to_dict(self) -> dict:
        from dataclasses import asdict
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


@dataclass(frozen=True, eq=False)
class TeacherOutput:
    """Out-of-sample effect predictions for the training units.

    ``crossfit_halves[r, i]`` is the half (0/1) unit ``i`` fell in at repeat
    ``r``; the model predicting unit ``i`` at that repeat was fit on the other
    half only. ``repeat_predictions[r]`` holds that repeat's predictions.
    """

    tau_hat_d: np.ndarray
    spec: TeacherSpec
    out_of_sample: np.ndarray
    crossfit_halves: np.ndarray | None = None
    repeat_predictions: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.tau_hat_d)):
            raise EstimationError("teacher produced non-finite predictions")


def _t_learner(train: Dataset, spec: TeacherSpec, seed: int, threads) -> TeacherOutput:
    z = train.z
    tau = np.empty(train.n)
    flagged = np.zeros(train.n, dtype=bool)
    mu = {}
    for arm in (0, 1):
        rows = np.flatnonzero(z == arm)
        params = ForestParams(**{**spec.forest.__dict__, "seed": derive_int(seed, "t-forest", arm)})
        forest = fit_forest(train.x[rows], train.y[rows], params, threads)
        oob, flag = forest.oob_predict()
        full = forest.predict(train.x)
        full[rows] = oob
        flagged[rows] = flag
        mu[arm] = full
    tau[:] = mu[1] - mu[0]
    return TeacherOutput(tau, spec, ~flagged)


def _crossfit_halves(z: np.ndarray, rng_seed: int, r: int) -> np.ndarray:
    """Random half assignment, balanced within each arm; both arms in each half."""
    n = len(z)
    for attempt in range(MAX_SPLIT_TRIES):
        rng = derive_rng(rng_seed, "crossfit", r, attempt)
        half = np.empty(n, dtype=np.int64)
        for arm in (0, 1):
            rows = np.flatnonzero(z == arm)
            perm = rng.permutation(rows)
            offset = rng.integers(2)
            half[perm] = (np.arange(len(perm)) + offset) % 2
        ok = all(np.any((half == h) & (z == arm)) for h in (0, 1) for arm in (0, 1))
        if ok:
            return half
    raise EstimationError(
        f"could not split {int(np.sum(z == 1))} treated / {int(np.sum(z == 0))} control "
        f"units into halves with both arms after {MAX_SPLIT_TRIES} tries")


def _s_learner_fit(x, z, y, spec: TeacherSpec, seed: int):
    params = GbtParams(**{**spec.gbt.__dict__, "seed": seed})
    model = fit_gbt(np.column_stack([x, z]), y, params)

    def tau(xn):
        ones = np.ones(len(xn))
        return (model.predict(np.column_stack([xn, ones]))
                - model.predict(np.column_stack([xn, 0 * ones])))

    return tau


def r_pseudo_outcome(y, z, m_hat, e_hat, clip=PROPENSITY_CLIP):
    """R-learner regression target ``(Y - m)/(Z - e)`` and weight ``(Z - e)^2``."""
    e = np.clip(np.asarray(e_hat, dtype=float), *clip)
    resid_z = np.asarray(z, dtype=float) - e
    return (np.asarray(y, dtype=float) - m_hat) / resid_z, resid_z ** 2


def _nuisance_folds(z, k: int, seed: int) -> np.ndarray:
    rng = derive_rng(seed, "nuisance")
    fold = np.empty(len(z), dtype=np.int64)
    for arm in (0, 1):
        rows = np.flatnonzero(z == arm)
        fold[rng.permutation(rows)] = np.arange(len(rows)) % k
    return fold


def _r_learner_fit(x, z, y, spec: TeacherSpec, seed: int):
    n = len(y)
    k = min(spec.nuisance_folds, max(2, min(int(np.sum(z == 1)), int(np.sum(z == 0)))))
    fold = _nuisance_folds(z, k, seed)
    m_hat = np.empty(n)
    e_hat = np.empty(n)
    for f in range(k):
        test = fold == f
        params = GbtParams(**{**spec.gbt.__dict__, "seed": derive_int(seed, "m", f)})
        m_hat[test] = fit_gbt(x[~test], y[~test], params).predict(x[test])
        if spec.propensity == ESTIMATE:
            zt = z[~test]
            if zt.min() == zt.max():
                e_hat[test] = zt.mean()
            else:
                coef, _ = logistic_irls(x[~test], zt)
                e_hat[test] = predict_propensity(coef, x[test])
        else:
            e_hat[test] = float(spec.propensity)
    pseudo, weight = r_pseudo_outcome(y, z, m_hat, e_hat)
    params = GbtParams(**{**spec.gbt.__dict__, "seed": derive_int(seed, "tau")})
    model = fit_gbt(x, pseudo, params, sample_weights=weight)
    return model.predict


def _crossfit(train: Dataset, spec: TeacherSpec, seed: int, threads) -> TeacherOutput:
    fitter = _s_learner_fit if spec.kind is TeacherKind.S_LEARNER_GBT else _r_learner_fit
    x, z, y = train.x, train.z, train.y

    def one_repeat(r: int):
        half = _crossfit_halves(z, seed, r)
        pred = np.empty(train.n)
        for h in (0, 1):
            fit_rows = half == h
            tau = fitter(x[fit_rows], z[fit_rows], y[fit_rows], spec,
                         derive_int(seed, "repeat", r, h))
            pred[~fit_rows] = tau(x[~fit_rows])
        return half, pred

    results = pmap(one_repeat, range(spec.crossfit_repeats), threads)
    halves = np.array([h for h, _ in results])
    preds = np.array([p for _, p in results])
    return TeacherOutput(preds.mean(axis=0), spec, np.ones(train.n, dtype=bool), halves, preds)


def fit_teacher(train: Dataset, spec: TeacherSpec = TeacherSpec(), seed: int = 0,
                threads: int | None = None) -> TeacherOutput:
    """Out-of-sample CATE predictions for every unit of ``train``."""
    if train.z.min() == train.z.max():
        raise EstimationError("teacher training data must contain both treatment arms")
    if spec.kind is TeacherKind.T_LEARNER_FOREST:
        return _t_learner(train, spec, seed, threads)
    if spec.kind is TeacherKind.NOISE_TEACHER:
        base = _t_learner(train, spec, seed, threads)
        perm = derive_rng(seed, "noise-permutation").permutation(train.n)
        return TeacherOutput(base.tau_hat_d[perm], spec, base.out_of_sample[perm],
                             extras={"source": base.tau_hat_d, "permutation": perm})
    return _crossfit(train, spec, seed, threads)
