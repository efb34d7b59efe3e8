import warnings
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdtree.core import Dataset
from cdtree.inference import (
    UndefinedEstimate, dr_weighted_adjusted, fit_propensity, heterogeneity_test, ipw_weights,
    logistic_irls, subgroup_dim, subgroup_variance,
)

from oracles import chi2_sf_df1


def _data(y, z, x=None):
    y = np.asarray(y, dtype=float)
    x = np.zeros((len(y), 1)) if x is None else x
    return Dataset(x, z, y)


def test_dim_simple_example():
    d = _data([3, 5, 1, 1], [1, 1, 0, 0])
    assert subgroup_dim(d, np.zeros(4, int), 0) == 3.0
    assert subgroup_dim(_data([2.0] * 4, [1, 0, 1, 0]), np.zeros(4, int), 0) == 0.0


def test_variance_simple_example():
    d = _data([0, 2, 0, 0], [1, 1, 0, 0])
    assert subgroup_variance(d, np.zeros(4, int), 0) == pytest.approx(1.0)
    assert subgroup_variance(_data([1.0] * 4, [1, 1, 0, 0]), np.zeros(4, int), 0) == 0.0


def test_empty_or_thin_arm_is_undefined():
    d = _data([1, 2, 3, 4], [1, 1, 1, 0])
    with pytest.raises(UndefinedEstimate):
        subgroup_dim(d, np.array([0, 0, 0, 1]), 0)
    with pytest.raises(UndefinedEstimate):
        subgroup_variance(d, np.zeros(4, int), 0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(-50, 50), scale=st.floats(0.1, 10))
def test_dim_and_variance_identities(seed, shift, scale):
    rng = np.random.default_rng(seed)
    n = 40
    z = np.r_[np.ones(20, int), np.zeros(20, int)]
    rng.shuffle(z)
    y = rng.normal(size=n)
    member = rng.integers(0, 2, n)
    member[:4] = 0
    z[:2], z[2:4] = 1, 0
    d = _data(y, z)
    g = 0
    sel = member == g
    y1, y0 = y[sel & (z == 1)], y[sel & (z == 0)]
    if min(y1.size, y0.size) < 2:
        return
    # two-pass recomputation
    m1 = sum(y1) / len(y1)
    m0 = sum(y0) / len(y0)
    assert subgroup_dim(d, member, g) == pytest.approx(m1 - m0, abs=1e-12)
    s1 = sum((v - m1) ** 2 for v in y1) / (len(y1) - 1)
    s0 = sum((v - m0) ** 2 for v in y0) / (len(y0) - 1)
    assert subgroup_variance(d, member, g) == pytest.approx(s1 / len(y1) + s0 / len(y0))
    # shift/scale equivariance
    moved = _data(scale * y + shift, z)
    assert subgroup_dim(moved, member, g) == pytest.approx(scale * (m1 - m0), abs=1e-9)
    assert subgroup_variance(moved, member, g) == pytest.approx(
        scale ** 2 * subgroup_variance(d, member, g), rel=1e-9)


def _est(tau, var):
    return SimpleNamespace(tau_hat=tau, var_hat=var, defined=True)


def test_q_worked_example():
    res = heterogeneity_test([_est(0.0, 0.25), _est(1.0, 0.25)])
    assert res.statistic == pytest.approx(2.0)
    assert res.df == 1
    assert res.p_value == pytest.approx(chi2_sf_df1(2.0), rel=1e-9)
    assert res.p_value == pytest.approx(0.1573, abs=1e-4)


def test_q_equal_effects_and_skips():
    res = heterogeneity_test([_est(0.7, 0.1), _est(0.7, 0.3), _est(0.7, 0.2)])
    assert res.statistic == 0.0 and res.p_value == 1.0 and res.df == 2
    assert heterogeneity_test([_est(1.0, 0.1)]).skipped
    bad = SimpleNamespace(tau_hat=0.0, var_hat=float("nan"), defined=False)
    assert "undefined" in heterogeneity_test([_est(1.0, 0.1), bad]).skipped


def test_literal_variant():
    res = heterogeneity_test([_est(0.0, 0.25), _est(1.0, 0.25)], literal=True, overall=0.5)
    assert res.statistic == pytest.approx(2.0) and res.df == 2


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_q_order_invariant(seed):
    rng = np.random.default_rng(seed)
    ests = [_est(t, v) for t, v in zip(rng.normal(size=5), rng.uniform(0.1, 1, 5))]
    a = heterogeneity_test(ests)
    b = heterogeneity_test(ests[::-1])
    assert a.statistic == pytest.approx(b.statistic)


def test_propensity_independent_and_intercept_only():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2000, 3))
    z = rng.integers(0, 2, 2000)
    e = fit_propensity(x, z)
    assert np.max(np.abs(e - z.mean())) < 0.05
    z2 = np.r_[np.ones(50, int), np.zeros(50, int)]
    assert np.allclose(fit_propensity(np.zeros((100, 0)), z2), 0.5)


def test_propensity_recovers_coefficient():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5000, 1))
    z = rng.random(5000) < 1 / (1 + np.exp(-x[:, 0]))
    coef, converged = logistic_irls(x, z)
    assert converged
    assert coef[1] == pytest.approx(1.0, abs=0.15)


def test_propensity_separation_warns_and_clips():
    x = np.linspace(-1, 1, 40)[:, None]
    z = (x[:, 0] > 0).astype(int)
    with pytest.warns(RuntimeWarning):
        e = fit_propensity(x, z)
    assert e.min() >= 0.01 and e.max() <= 0.99


def test_ipw_weight_formula():
    assert ipw_weights([1, 0], [0.25, 0.25]).tolist() == [4.0, pytest.approx(4 / 3)]


def test_dr_matches_dim_under_randomization():
    rng = np.random.default_rng(2)
    n = 4000
    x = rng.normal(size=(n, 2))
    z = rng.integers(0, 2, n)
    y = 1.5 * z + rng.normal(size=n)
    d = Dataset(x, z, y)
    member = np.zeros(n, int)
    tau, var = dr_weighted_adjusted(d, member, 0, 0.5)
    assert abs(tau - subgroup_dim(d, member, 0)) < 0.02
    assert var > 0


def test_dr_hc0_against_explicit_formula():
    rng = np.random.default_rng(3)
    n = 60
    x = rng.normal(size=(n, 2))
    z = rng.integers(0, 2, n)
    y = z + x[:, 0] + rng.normal(size=n)
    e = rng.uniform(0.3, 0.7, n)
    tau, var = dr_weighted_adjusted(Dataset(x, z, y), np.zeros(n, int), 0, e)
    X = np.column_stack([np.ones(n), z, x])
    W = np.diag(np.where(z == 1, 1 / e, 1 / (1 - e)))
    bread = np.linalg.inv(X.T @ W @ X)
    beta = bread @ X.T @ W @ y
    r = y - X @ beta
    cov = bread @ X.T @ W @ np.diag(r ** 2) @ W @ X @ bread
    assert tau == pytest.approx(beta[1])
    assert var == pytest.approx(cov[1, 1])


def test_dr_drops_collinear_columns():
    rng = np.random.default_rng(4)
    n = 100
    x1 = rng.normal(size=n)
    x = np.column_stack([x1, 2 * x1])
    z = rng.integers(0, 2, n)
    y = z + x1 + rng.normal(size=n)
    with pytest.warns(RuntimeWarning, match="collinear"):
        tau, _ = dr_weighted_adjusted(Dataset(x, z, y), np.zeros(n, int), 0, 0.5)
    assert np.isfinite(tau)


def test_dr_requires_enough_units():
    d = _data([1.0, 2, 3, 4], [1, 0, 1, 0], np.zeros((4, 2)))
    with pytest.raises(UndefinedEstimate):
        dr_weighted_adjusted(d, np.zeros(4, int), 0, 0.5)
