import csv
import hashlib
import io
import math

import numpy as np
import pytest

from cdtree.core import Direction, Partition, Rule, Subgroup
from cdtree.pipeline import CdtConfig, SubgroupEstimate
from cdtree.simulation import (
    Dgp, DgpConfig, METRIC_COLUMNS, RESULT_COLUMNS, StudyConfig, evaluate_selection,
    gen_dataset, ground_truth, normal_cdf, pve_to_sigma, run_replicates, signal_variance,
    subgroup_ate_rmse, summarize, summary_columns, tau_mean, threshold_rmse, to_csv,
    transformed_outcome, transformed_outcome_tree,
)

import oracles

LE, GT = Direction.LE, Direction.GT


def _part(*rule_sets):
    return Partition(tuple(Subgroup(tuple(r)) for r in rule_sets))


def test_normal_cdf_against_quadrature():
    for x in (-2.0, -0.5, 0.0, 0.5, 1.7):
        assert normal_cdf(x) == pytest.approx(oracles.normal_cdf(x), abs=1e-9)


def test_signal_variances_closed_form():
    p = 0.5 * (1 - normal_cdf(0.5))
    assert p == pytest.approx(0.15427, abs=1e-5)
    assert signal_variance("and") == pytest.approx(0.52188, abs=1e-5)
    assert signal_variance("additive") == pytest.approx(1.213342, abs=1e-6)
    assert signal_variance("or") == pytest.approx(1.236293, abs=1e-6)


def test_signal_variances_monte_carlo():
    x = np.random.default_rng(0).standard_normal((4_000_000, 2))
    for dgp in Dgp:
        assert tau_mean(dgp, x).var() == pytest.approx(signal_variance(dgp), abs=3e-3)


def test_pve_to_sigma():
    for dgp in Dgp:
        assert pve_to_sigma(dgp, 1.0) == 0.0
    assert pve_to_sigma("and", 0.8) ** 2 == pytest.approx(0.13047, abs=1e-5)
    assert pve_to_sigma("additive", 0.5) ** 2 == pytest.approx(1.21334, abs=1e-5)
    with pytest.raises(ValueError):
        pve_to_sigma("and", 0.0)


def test_pve_one_has_deterministic_tau():
    data, truth, tau = gen_dataset(DgpConfig("or", n=200, pve=1.0, seed=1))
    assert np.array_equal(tau, tau_mean("or", data.x))
    assert truth.sigma_tau == 0.0


def test_additive_region_mean():
    x = np.random.default_rng(2).standard_normal((20000, 2))
    cell = (x[:, 0] > 0) & (x[:, 1] >= -0.5)
    assert np.all(tau_mean("additive", x[cell]) == 2.0)


def test_pinned_checksum():
    d, _, _ = gen_dataset(DgpConfig("and", "linear-covariates", 50, 10, 0.8, 123))
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(d.x[:10]).tobytes())
    h.update(d.z[:10].astype("<i8").tobytes())
    h.update(d.y[:10].tobytes())
    assert h.hexdigest() == "4c19d9aedcd32d336fb33b33656ff37525aef2ee95904d95b47dd3fb191d5c58"


def test_dgp_config_validation():
    with pytest.raises(ValueError):
        DgpConfig(outcome="linear-covariates", p=3)
    with pytest.raises(ValueError):
        DgpConfig(pve=1.5)


def test_transformed_outcome_identities():
    y = np.array([1.5, -2.0, 0.3])
    z = np.array([1, 0, 1])
    assert np.array_equal(transformed_outcome(y, z, 0.5), 2 * (2 * z - 1) * y)
    rng = np.random.default_rng(3)
    n = 1_000_000
    x = rng.standard_normal((n, 2))
    zz = rng.integers(0, 2, n)
    tau = tau_mean("additive", x)
    ystar = transformed_outcome(zz * tau + 0.1 * rng.standard_normal(n), zz, 0.5)
    for region in ((x[:, 0] > 0) & (x[:, 1] >= -0.5), x[:, 0] <= 0):
        assert ystar[region].mean() == pytest.approx(tau[region].mean(), abs=0.02)


def test_baseline_tree_runs_honestly():
    data, _, _ = gen_dataset(DgpConfig("additive", n=400, pve=1.0, seed=4))
    rep = transformed_outcome_tree(data, 0.5, CdtConfig(seed=1))
    assert rep.n_subgroups >= 1
    assert sum(e.n_g for e in rep.estimates) == len(rep.est_index)


def test_evaluate_selection_examples():
    truth = ground_truth("and")
    s = evaluate_selection(_part([Rule(0, LE, 0.0)], [Rule(0, GT, 0.0), Rule(2, LE, 1.0)],
                                 [Rule(0, GT, 0.0), Rule(2, GT, 1.0)]), truth)
    assert (s.tp, s.fp, s.f1) == (1, 1, 0.5)
    s = evaluate_selection(_part([Rule(0, LE, 0.0)], [Rule(0, GT, 0.0), Rule(1, LE, 0.5)],
                                 [Rule(0, GT, 0.0), Rule(1, GT, 0.5)]), truth)
    assert s.f1 == 1.0
    root = evaluate_selection(_part([]), truth)
    assert (root.tp, root.fp, root.fn, root.f1) == (0, 0, 2, 0.0)


def test_evaluate_selection_noise_rule_adds_one_fp():
    truth = ground_truth("additive")
    base = [[Rule(0, LE, 0.0)], [Rule(0, GT, 0.0)]]
    extra = [[Rule(0, LE, 0.0), Rule(5, LE, 0.1)], [Rule(0, LE, 0.0), Rule(5, GT, 0.1)],
             [Rule(0, GT, 0.0)]]
    assert evaluate_selection(_part(*extra), truth).fp == \
        evaluate_selection(_part(*base), truth).fp + 1
    assert evaluate_selection(_part(*extra[::-1]), truth) == evaluate_selection(_part(*extra),
                                                                                truth)


def test_threshold_rmse_examples():
    assert threshold_rmse(_part([Rule(0, LE, 0.1)], [Rule(0, GT, 0.1)]),
                          ground_truth("and")) == {0: pytest.approx(0.1), 1: None}
    part = _part([Rule(1, LE, -0.4)], [Rule(1, GT, -0.4), Rule(1, LE, 0.6)],
                 [Rule(1, GT, -0.4), Rule(1, GT, 0.6)])
    assert threshold_rmse(part, ground_truth("or"))[1] == pytest.approx(0.1)


class _Report:
    def __init__(self, partition, taus, p=2):
        self.partition = partition
        self.estimates = [SubgroupEstimate(g, t, 0.1, 10, 5, 5, t)
                          for g, t in zip(partition.subgroups, taus)]
        self.tree = type("T", (), {"n_features": p})()


def test_subgroup_ate_rmse_examples():
    p = 0.5 * (1 - normal_cdf(0.5))
    root = _Report(_part([]), [0.0])
    assert subgroup_ate_rmse(root, ground_truth("and"), 400_000) == pytest.approx(2 * p, abs=0.01)
    oracle = _part([Rule(0, LE, 0.0), Rule(1, LE, -0.5)], [Rule(0, LE, 0.0), Rule(1, GT, -0.5)],
                   [Rule(0, GT, 0.0), Rule(1, LE, -0.5)], [Rule(0, GT, 0.0), Rule(1, GT, -0.5)])
    exact = _Report(oracle, [-1.0, 0.0, 1.0, 2.0])
    assert subgroup_ate_rmse(exact, ground_truth("additive"), 200_000) == pytest.approx(0.0)


def test_subgroup_ate_rmse_widens_small_regions():
    tiny = _part([Rule(0, LE, 4.0)], [Rule(0, GT, 4.0)])
    with pytest.warns(RuntimeWarning, match="widening"):
        subgroup_ate_rmse(_Report(tiny, [0.3, 2.0]), ground_truth("and"), 10_000)


def _fast_study(**kw):
    base = dict(n_trees=30, mc_n=20_000, ns=(200,))
    base.update(kw)
    return StudyConfig(**base)


def test_single_replicate_reproducible_and_thread_invariant():
    study = _fast_study(methods=("cdt-tforest", "baseline-tree"), reps=2, seed=5)
    a = run_replicates(study, threads=1)
    b = run_replicates(study, threads=3)
    assert to_csv(a, RESULT_COLUMNS) == to_csv(b, RESULT_COLUMNS)
    one = run_replicates(_fast_study(methods=("cdt-tforest",), reps=1, seed=5))
    assert one[0] == a[0]
    assert [r["method"] for r in a] == ["cdt-tforest", "baseline-tree"] * 2


def test_failed_method_yields_error_row():
    rows = run_replicates(_fast_study(ns=(8,), methods=("cdt-tforest",), reps=1))
    assert len(rows) == 1 and rows[0]["error"]


def test_summary_matches_hand_aggregation():
    rows = []
    for k, (fp, f1) in enumerate([(0, 1.0), (1, 0.8), (2, 0.5), (0, 1.0), (1, 0.5)]):
        rows.append({"replicate": k, "dgp": "and", "outcome": "cate-only", "n": 500, "p": 10,
                     "pve": 1.0, "method": "m", "seed": k, "n_subgroups": 4, "tp": 2,
                     "fp": fp, "f1": f1, "threshold_rmse_x1": None, "threshold_rmse_x2": 0.1,
                     "subgroup_ate_rmse": 0.2, "error": None})
    (s,) = summarize(rows)
    assert s["fp_mean"] == pytest.approx(0.8)
    assert s["fp_se"] == pytest.approx(math.sqrt(0.7) / math.sqrt(5))
    assert s["f1_mean"] == pytest.approx(0.76)
    assert s["threshold_rmse_x1_mean"] is None and s["threshold_rmse_x1_count"] == 0
    # the CSV round trip recomputes the same summary
    parsed = list(csv.DictReader(io.StringIO(to_csv(rows, RESULT_COLUMNS))))
    for r in parsed:
        for m in METRIC_COLUMNS:
            r[m] = None if r[m] == "" else float(r[m])
        r["n"], r["p"], r["pve"] = int(r["n"]), int(r["p"]), float(r["pve"])
    assert to_csv(summarize(parsed), summary_columns()) == to_csv([s], summary_columns())


def test_study_validation():
    with pytest.raises(ValueError):
        StudyConfig(dgps=("xor",))
    with pytest.raises(ValueError):
        StudyConfig(methods=("lasso",))
    with pytest.raises(ValueError):
        StudyConfig(reps=0)
