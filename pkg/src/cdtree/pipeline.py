"""Honest distillation pipeline.

A seeded, arm-stratified split sends ``pi_train`` of the units to a training
side where the teacher and the student tree are fit, and the rest to an
estimation side where the subgroup effects are computed. Estimation-side
outcomes never reach the tree.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from cdtree.core import Dataset, Partition, Subgroup, assign, partition_from_tree
from cdtree.errors import EstimationError
from cdtree.inference import (
    HeterogeneityTest, UndefinedEstimate, dr_weighted_adjusted, fit_propensity,
    heterogeneity_test, overall_dim, subgroup_dim, subgroup_variance,
)
from cdtree.rng import derive_rng
from cdtree.teachers import ESTIMATE, TeacherSpec, fit_teacher
from cdtree.tree import RegressionTree, TreeParams, cv_prune, fit_tree, prune_to_depth

MAX_SPLIT_TRIES = 100
QUANTILES = (0.0, 0.25, 0.5, 0.75, 1.0)
PRUNE_MODES = ("cv", "depth", "none")


@dataclass(frozen=True)
class CdtConfig:
    """Pipeline settings.

    ``prune`` is ``"cv"`` (cost-complexity pruning tuned by ``cv_folds``-fold
    cross-validation), ``"depth"`` (cut at ``prune_depth``) or ``"none"``.
    ``dr`` adds the weighted, covariate-adjusted estimate per subgroup, using
    the teacher's propensity (known constant or logistic fit on the
    estimation side).
    """

    pi_train: float = 0.7
    teacher: TeacherSpec = TeacherSpec()
    student: TreeParams = TreeParams()
    prune: str = "cv"
    prune_depth: int = 2
    cv_folds: int = 10
    literal_test: bool = False
    dr: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.pi_train < 1:
            raise ValueError("pi_train must lie in (0, 1)")
        if self.prune not in PRUNE_MODES:
            raise ValueError(f"prune must be one of {PRUNE_MODES}")
        if self.prune_depth < 0:
            raise ValueError("prune_depth must be >= 0")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["teacher"] = self.teacher.to_dict()
        return d


@dataclass(frozen=True)
class SubgroupEstimate:
    subgroup: Subgroup
    tau_hat: float
    var_hat: float
    n_g: int
    n_g1: int
    n_g0: int
    student_mean: float
    defined: bool = True
    note: str | None = None
    dr_tau_hat: float | None = None
    dr_var_hat: float | None = None

    @property
    def se(self) -> float:
        return float(np.sqrt(self.var_hat)) if np.isfinite(self.var_hat) else float("nan")


@dataclass(frozen=True, eq=False)
class CdtReport:
    partition: Partition
    tree: RegressionTree
    estimates: tuple[SubgroupEstimate, ...]
    test: HeterogeneityTest
    diagnostics: dict
    config: CdtConfig
    train_index: np.ndarray
    est_index: np.ndarray
    tau_hat_d: np.ndarray
    warnings: tuple[str, ...] = field(default_factory=tuple)

    @property
    def n_subgroups(self) -> int:
        return len(self.partition)


def split_indices(z, pi_train: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Arm-stratified random split into training and estimation index sets.

    The training side gets ``floor(pi_train * n)`` units, allocated to the
    arms in proportion to their sizes.
    """
    z = np.asarray(z)
    n = len(z)
    n_train = int(np.floor(pi_train * n))
    treated = np.flatnonzero(z == 1)
    control = np.flatnonzero(z == 0)
    n1 = int(round(n_train * len(treated) / n))
    n0 = n_train - n1
    for attempt in range(MAX_SPLIT_TRIES):
        rng = derive_rng(seed, "honest-split", attempt)
        t = rng.permutation(treated)
        c = rng.permutation(control)
        train = np.sort(np.concatenate([t[:n1], c[:n0]]))
        est = np.sort(np.concatenate([t[n1:], c[n0:]]))
        if all(np.any(z[side] == arm) for side in (train, est) for arm in (0, 1)):
            return train, est
        # a fixed allocation cannot improve by reshuffling; nudge it
        if n1 == 0 or n1 == len(treated):
            n1 = min(max(n1, 1), len(treated) - 1)
            n0 = n_train - n1
        if n0 == 0 or n0 == len(control):
            n0 = min(max(n0, 1), len(control) - 1)
            n1 = n_train - n0
    raise EstimationError(
        f"could not split {len(treated)} treated / {len(control)} control units so that "
        f"both sides contain both arms (pi_train={pi_train}) after {MAX_SPLIT_TRIES} tries")


def fit_student(x, targets, config: CdtConfig) -> RegressionTree:
    if config.prune == "cv":
        return cv_prune(x, targets, config.student, config.cv_folds, config.seed)
    tree = fit_tree(x, targets, config.student, config.seed)
    if config.prune == "depth":
        tree = prune_to_depth(tree, config.prune_depth)
    return tree


def estimate_subgroups(est: Dataset, partition: Partition, *, dr: bool = False,
                       propensity=0.5, student_means=None,
                       ) -> tuple[list[SubgroupEstimate], list[str]]:
    """Difference-in-means effect and variance for each subgroup of ``partition``."""
    membership = assign(partition, est)
    notes: list[str] = []
    e_hat = None
    if dr:
        if propensity == ESTIMATE:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                e_hat = fit_propensity(est.x, est.z)
            notes += [str(w.message) for w in caught]
        else:
            e_hat = np.full(est.n, float(propensity))
    out = []
    for g, sub in enumerate(partition.subgroups):
        members = membership == g
        n_g1 = int(np.sum(members & (est.z == 1)))
        n_g0 = int(np.sum(members & (est.z == 0)))
        tau = var = float("nan")
        defined, note = True, None
        try:
            tau = subgroup_dim(est, membership, g)
            var = subgroup_variance(est, membership, g)
        except UndefinedEstimate as exc:
            defined, note = False, str(exc)
            notes.append(f"{sub.label}: {exc}")
        dr_tau = dr_var = None
        if dr:
            try:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    dr_tau, dr_var = dr_weighted_adjusted(est, membership, g, e_hat)
                notes += [f"{sub.label}: {w.message}" for w in caught]
            except UndefinedEstimate as exc:
                notes.append(f"{sub.label}: weighted estimate undefined ({exc})")
        mean_d = float("nan") if student_means is None else float(student_means[g])
        out.append(SubgroupEstimate(sub, tau, var, n_g1 + n_g0, n_g1, n_g0, mean_d,
                                    defined, note, dr_tau, dr_var))
    return out, notes


def _diagnostics(train: Dataset, est: Dataset, tree: RegressionTree, partition: Partition,
                 tau_d: np.ndarray) -> dict:
    from cdtree.tree import predict
    fitted = predict(tree, train.x)
    train_membership = assign(partition, train)
    nodes = []
    for g, sub in enumerate(partition.subgroups):
        vals = tau_d[train_membership == g]
        q = np.quantile(vals, QUANTILES) if vals.size else [float("nan")] * len(QUANTILES)
        nodes.append({
            "label": sub.label,
            "n_train": int(vals.size),
            "n_train1": int(np.sum((train_membership == g) & (train.z == 1))),
            "n_train0": int(np.sum((train_membership == g) & (train.z == 0))),
            "teacher_quantiles": dict(zip(["min", "q25", "median", "q75", "max"],
                                          (float(v) for v in q))),
        })
    return {
        "student_rmse": float(np.sqrt(np.mean((fitted - tau_d) ** 2))),
        "teacher_mean": float(tau_d.mean()),
        "teacher_sd": float(tau_d.std()),
        "n_train": train.n,
        "n_est": est.n,
        "train_arms": [int(np.sum(train.z == 0)), int(np.sum(train.z == 1))],
        "est_arms": [int(np.sum(est.z == 0)), int(np.sum(est.z == 1))],
        "nodes": nodes,
    }


def honest_report(data: Dataset, config: CdtConfig, train_idx, est_idx, targets,
                  threads=None) -> CdtReport:
    """Distill ``targets`` (one per training unit) and estimate on the held-out units."""
    train = data.subset(train_idx)
    est = data.subset(est_idx)
    tree = fit_student(train.x, targets, config)
    partition = partition_from_tree(tree, data.feature_names)
    student_means = [tree.value[k] for k in tree.leaves]
    propensity = config.teacher.propensity
    estimates, notes = estimate_subgroups(est, partition, dr=config.dr, propensity=propensity,
                                          student_means=student_means)
    test = heterogeneity_test(estimates, literal=config.literal_test,
                              overall=overall_dim(est))
    return CdtReport(partition, tree, tuple(estimates), test,
                     _diagnostics(train, est, tree, partition, np.asarray(targets)),
                     config, np.asarray(train_idx), np.asarray(est_idx),
                     np.asarray(targets, dtype=float), tuple(notes))


def run_cdt(data: Dataset, config: CdtConfig = CdtConfig(), threads: int | None = None,
            ) -> CdtReport:
    """Fit the teacher and the student on the training side; estimate on the rest."""
    train_idx, est_idx = split_indices(data.z, config.pi_train, config.seed)
    train = data.subset(train_idx)
    teacher = fit_teacher(train, config.teacher, config.seed, threads)
    return honest_report(data, config, train_idx, est_idx, teacher.tau_hat_d, threads)
