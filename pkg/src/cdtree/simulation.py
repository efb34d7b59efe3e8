"""Simulated subgroup designs, evaluation metrics, a no-distillation baseline
and a seeded replicate runner.

Three effect designs are available, all with iid standard normal covariates
and a fair-coin treatment:

* AND:      tau = 2 1{X1 > 0} 1{X2 > 0.5} + eps
* ADDITIVE: tau = 2 1{X1 > 0} - 1{X2 < -0.5} + eps
* OR:       tau = 2 1{X1 > 0} - 1{X2 > 0.5 or X2 < -0.5} + eps

``eps ~ N(0, sigma_tau^2)`` with ``sigma_tau`` chosen so that the covariates
explain a fraction ``pve`` of var(tau). Outcomes are ``Y = Z tau + nu`` or
``Y = Z tau + X3 + X4 + nu`` with ``nu ~ N(0, 0.1^2)``.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from cdtree.core import Dataset, Partition, assign
from cdtree.errors import CdtError
from cdtree.parallel import pmap
from cdtree.pipeline import CdtConfig, CdtReport, honest_report, run_cdt, split_indices
from cdtree.rng import derive_int, derive_rng
from cdtree.teachers import ForestParams, GbtParams, TeacherKind, TeacherSpec
from cdtree.tree import TreeParams

OUTCOME_NOISE_SD = 0.1


def normal_cdf(x: float) -> float:
    """Standard normal CDF through ``math.erf`` (accurate to double precision)."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


class Dgp(str, Enum):
    AND = "and"
    ADDITIVE = "additive"
    OR = "or"


class Outcome(str, Enum):
    CATE_ONLY = "cate-only"
    LINEAR_COVARIATES = "linear-covariates"


def signal_variance(dgp: Dgp) -> float:
    """var(E[tau | X]) under independent standard normal covariates."""
    dgp = Dgp(dgp)
    if dgp is Dgp.AND:
        p = 0.5 * (1.0 - normal_cdf(0.5))
        return 4.0 * p * (1.0 - p)
    if dgp is Dgp.ADDITIVE:
        q = normal_cdf(-0.5)
        return 4.0 * 0.25 + q * (1.0 - q)
    r = 2.0 * normal_cdf(-0.5)
    return 1.0 + r * (1.0 - r)


def pve_to_sigma(dgp: Dgp, pve: float) -> float:
    if not 0 < pve <= 1:
        raise ValueError(f"pve must lie in (0, 1], got {pve}")
    return math.sqrt(signal_variance(dgp) * (1.0 / pve - 1.0))


def tau_mean(dgp: Dgp, x) -> np.ndarray:
    """E[tau | X] for the given design."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[:, 0], x[:, 1]
    dgp = Dgp(dgp)
    if dgp is Dgp.AND:
        return 2.0 * (x1 > 0) * (x2 > 0.5)
    if dgp is Dgp.ADDITIVE:
        return 2.0 * (x1 > 0) - 1.0 * (x2 < -0.5)
    return 2.0 * (x1 > 0) - 1.0 * ((x2 > 0.5) | (x2 < -0.5))


TRUE_THRESHOLDS = {
    Dgp.AND: {0: (0.0,), 1: (0.5,)},
    Dgp.ADDITIVE: {0: (0.0,), 1: (-0.5,)},
    Dgp.OR: {0: (0.0,), 1: (-0.5, 0.5)},
}


@dataclass(frozen=True)
class DgpConfig:
    dgp: Dgp = Dgp.AND
    outcome: Outcome = Outcome.CATE_ONLY
    n: int = 500
    p: int = 10
    pve: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dgp", Dgp(self.dgp))
        object.__setattr__(self, "outcome", Outcome(self.outcome))
        if self.n < 2:
            raise ValueError("n must be >= 2")
        min_p = 4 if self.outcome is Outcome.LINEAR_COVARIATES else 2
        if self.p < min_p:
            raise ValueError(f"p must be >= {min_p} for outcome {self.outcome.value}")
        pve_to_sigma(self.dgp, self.pve)


@dataclass(frozen=True)
class GroundTruth:
    dgp: Dgp
    sigma_tau: float
    true_features: frozenset = frozenset({0, 1})
    true_thresholds: dict = field(default_factory=dict)

    def tau(self, x) -> np.ndarray:
        return tau_mean(self.dgp, x)


def ground_truth(dgp: Dgp, pve: float = 1.0) -> GroundTruth:
    dgp = Dgp(dgp)
    return GroundTruth(dgp, pve_to_sigma(dgp, pve), frozenset({0, 1}), TRUE_THRESHOLDS[dgp])


def gen_dataset(config: DgpConfig) -> tuple[Dataset, GroundTruth, np.ndarray]:
    """Draw one dataset; returns the data, the truth and the realized tau."""
    rng = derive_rng(config.seed, "dgp")
    n, p = config.n, config.p
    truth = ground_truth(config.dgp, config.pve)
    x = rng.standard_normal((n, p))
    z = rng.integers(0, 2, n)
    tau = tau_mean(config.dgp, x) + truth.sigma_tau * rng.standard_normal(n)
    y = z * tau + OUTCOME_NOISE_SD * rng.standard_normal(n)
    if config.outcome is Outcome.LINEAR_COVARIATES:
        y = y + x[:, 2] + x[:, 3]
    return Dataset(x, z, y), truth, tau


# ---------------------------------------------------------------- baseline

def transformed_outcome(y, z, e: float) -> np.ndarray:
    """Horvitz-Thompson pseudo-outcome ``Y (Z - e) / (e (1 - e))``."""
    return np.asarray(y, dtype=float) * (np.asarray(z) - e) / (e * (1.0 - e))


def transformed_outcome_tree(data: Dataset, e: float = 0.5,
                             config: CdtConfig = CdtConfig()) -> CdtReport:
    """Tree fit directly to the transformed outcome, honestly estimated.

    Uses the same split, pruning and estimation as the distillation pipeline;
    only the training targets differ.
    """
    if not 0 < e < 1:
        raise ValueError("propensity must lie in (0, 1)")
    train_idx, est_idx = split_indices(data.z, config.pi_train, config.seed)
    targets = transformed_outcome(data.y[train_idx], data.z[train_idx], e)
    return honest_report(data, config, train_idx, est_idx, targets)


# ---------------------------------------------------------------- metrics

@dataclass(frozen=True)
class SelectionScore:
    tp: int
    fp: int
    fn: int
    f1: float


def evaluate_selection(partition: Partition, truth: GroundTruth) -> SelectionScore:
    selected = partition.features()
    true = set(truth.true_features)
    tp = len(selected & true)
    fp = len(selected - true)
    fn = len(true - selected)
    denom = 2 * tp + fp + fn
    return SelectionScore(tp, fp, fn, 2 * tp / denom if denom else 0.0)


def threshold_rmse(partition: Partition, truth: GroundTruth) -> dict[int, float | None]:
    """Per true feature: RMSE of its split points against the nearest true threshold.

    ``None`` when the feature is never split on.
    """
    out: dict[int, float | None] = {}
    splits = partition.thresholds()
    for f in sorted(truth.true_features):
        targets = np.asarray(truth.true_thresholds[f])
        errs = [np.min(np.abs(targets - s)) for g, s in splits if g == f]
        out[f] = float(np.sqrt(np.mean(np.square(errs)))) if errs else None
    return out


def subgroup_ate_rmse(report: CdtReport, truth: GroundTruth, mc_n: int = 1_000_000,
                      seed: int = 0, p: int | None = None) -> float:
    """RMSE of the defined subgroup estimates against Monte Carlo region means.

    The truth for a subgroup is the mean of E[tau | X] over a fresh covariate
    sample restricted to that subgroup's region. Regions catching fewer than
    100 draws trigger a larger sample.
    """
    p = p if p is not None else report.tree.n_features
    partition = report.partition
    sums = np.zeros(len(partition))
    counts = np.zeros(len(partition), dtype=np.int64)
    rng = derive_rng(seed, "ate-truth")
    draws = 0
    chunk = min(mc_n, 250_000)
    while draws < mc_n or (counts.min() < 100 and draws < 64 * mc_n):
        if draws >= mc_n and draws == mc_n:
            warnings.warn("a subgroup holds fewer than 100 Monte Carlo points; widening the "
                          "sample", RuntimeWarning, stacklevel=2)
        x = rng.standard_normal((chunk, p))
        g = assign(partition, x)
        sums += np.bincount(g, weights=truth.tau(x), minlength=len(partition))
        counts += np.bincount(g, minlength=len(partition))
        draws += chunk
    errs = []
    for k, est in enumerate(report.estimates):
        if est.defined and counts[k] > 0:
            errs.append(est.tau_hat - sums[k] / counts[k])
    return float(np.sqrt(np.mean(np.square(errs)))) if errs else float("nan")


# ---------------------------------------------------------------- replicate runner

METHODS = {
    "cdt-tforest": TeacherKind.T_LEARNER_FOREST,
    "cdt-sgbt": TeacherKind.S_LEARNER_GBT,
    "cdt-rgbt": TeacherKind.R_LEARNER_GBT,
    "baseline-tree": None,
}

RESULT_COLUMNS = ("replicate", "dgp", "outcome", "n", "p", "pve", "method", "seed",
                  "n_subgroups", "tp", "fp", "f1", "threshold_rmse_x1", "threshold_rmse_x2",
                  "subgroup_ate_rmse", "error")
METRIC_COLUMNS = ("n_subgroups", "tp", "fp", "f1", "threshold_rmse_x1",
                  "threshold_rmse_x2", "subgroup_ate_rmse")
CELL_COLUMNS = ("dgp", "outcome", "n", "p", "pve", "method")


@dataclass(frozen=True)
class StudyConfig:
    """A grid of designs, sample sizes and noise levels crossed with methods."""

    dgps: tuple[str, ...] = ("and",)
    pves: tuple[float, ...] = (1.0,)
    ns: tuple[int, ...] = (500,)
    p: int = 10
    outcome: str = "cate-only"
    methods: tuple[str, ...] = ("cdt-tforest",)
    reps: int = 1
    seed: int = 0
    n_trees: int = 500
    crossfit_repeats: int = 50
    mc_n: int = 1_000_000
    pi_train: float = 0.7
    prune: str = "cv"
    prune_depth: int = 2
    student_cp: float = 0.01
    baseline_cp: float = 0.0

    def __post_init__(self):
        for name in ("dgps", "pves", "ns", "methods"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        for d in self.dgps:
            Dgp(d)
        for v in self.pves:
            if not 0 < v <= 1:
                raise ValueError(f"pve must lie in (0, 1], got {v}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {sorted(METHODS)}")
        Outcome(self.outcome)

    def to_dict(self) -> dict:
        return asdict(self)


def method_config(study: StudyConfig, method: str, seed: int) -> CdtConfig:
    kind = METHODS[method] or TeacherKind.T_LEARNER_FOREST
    teacher = TeacherSpec(kind=kind, forest=ForestParams(n_trees=study.n_trees),
                          gbt=GbtParams(), crossfit_repeats=study.crossfit_repeats)
    cp = study.student_cp if METHODS[method] else study.baseline_cp
    return CdtConfig(pi_train=study.pi_train, teacher=teacher, student=TreeParams(complexity=cp),
                     prune=study.prune, prune_depth=study.prune_depth, seed=seed)


def run_method(data: Dataset, method: str, config: CdtConfig) -> CdtReport:
    if METHODS[method] is None:
        return transformed_outcome_tree(data, 0.5, config)
    return run_cdt(data, config, threads=1)


def _one_replicate(study: StudyConfig, cell: tuple, r: int) -> list[dict]:
    dgp, pve, n = cell
    seed = derive_int(study.seed, "replicate", str(dgp), repr(float(pve)), n, r)
    rows = []
    base = {"replicate": r, "dgp": dgp, "outcome": study.outcome, "n": n, "p": study.p,
            "pve": pve, "seed": seed}
    try:
        data, truth, _ = gen_dataset(DgpConfig(dgp, study.outcome, n, study.p, pve, seed))
    except (CdtError, ValueError) as exc:
        return [{**base, "method": m, "error": f"{type(exc).__name__}: {exc}"}
                for m in study.methods]
    for method in study.methods:
        row = {**base, "method": method}
        try:
            report = run_method(data, method, method_config(study, method, seed))
            sel = evaluate_selection(report.partition, truth)
            thr = threshold_rmse(report.partition, truth)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ate = (subgroup_ate_rmse(report, truth, study.mc_n, seed, study.p)
                       if study.mc_n > 0 else None)
            row.update(n_subgroups=report.n_subgroups, tp=sel.tp, fp=sel.fp, f1=sel.f1,
                       threshold_rmse_x1=thr[0], threshold_rmse_x2=thr[1],
                       subgroup_ate_rmse=ate)
        except Exception as exc:  # a failing replicate must not abort the study
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def run_replicates(study: StudyConfig, threads: int | None = None) -> list[dict]:
    """Long-format metric rows, one per (cell, replicate, method).

    Each replicate's data seed depends only on the base seed, the cell and
    the replicate index, and all methods see the same draw. A failing method
    produces a row with the ``error`` field set.
    """
    jobs = [((d, v, n), r) for d in study.dgps for v in study.pves for n in study.ns
            for r in range(study.reps)]
    chunks = pmap(lambda job: _one_replicate(study, *job), jobs, threads)
    rows = [row for chunk in chunks for row in chunk]
    return [{c: row.get(c) for c in RESULT_COLUMNS} for row in rows]


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and standard error of each metric per cell, skipping errors and undefined values."""
    cells: dict[tuple, list[dict]] = {}
    for row in rows:
        cells.setdefault(tuple(row[c] for c in CELL_COLUMNS), []).append(row)
    out = []
    for key, group in cells.items():
        ok = [r for r in group if not r.get("error")]
        summary = dict(zip(CELL_COLUMNS, key))
        summary["reps"] = len(group)
        summary["errors"] = len(group) - len(ok)
        for m in METRIC_COLUMNS:
            vals = np.array([float(r[m]) for r in ok if r.get(m) is not None
                             and r[m] != "" and np.isfinite(float(r[m]))])
            summary[f"{m}_count"] = int(vals.size)
            summary[f"{m}_mean"] = float(vals.mean()) if vals.size else None
            summary[f"{m}_se"] = (float(vals.std(ddof=1) / np.sqrt(vals.size))
                                  if vals.size > 1 else None)
        out.append(summary)
    return out


def summary_columns() -> tuple[str, ...]:
    cols = list(CELL_COLUMNS) + ["reps", "errors"]
    for m in METRIC_COLUMNS:
        cols += [f"{m}_count", f"{m}_mean", f"{m}_se"]
    return tuple(cols)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if np.isfinite(v) else ""
    return str(v)


def to_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()
