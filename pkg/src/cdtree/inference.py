"""Subgroup effect estimation and inference on the held-out estimation split.

Covers the subgroup difference in means and its variance, a chi-square test
of effect heterogeneity across subgroups, logistic propensity scores, and the
inverse-propensity-weighted, covariate-adjusted regression estimator with a
sandwich variance.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from cdtree.core import Dataset
from cdtree.errors import EstimationError

PROPENSITY_CLIP = (0.01, 0.99)


class UndefinedEstimate(EstimationError):
    """A subgroup lacks enough treated or control units for the estimate."""


def _arms(data: Dataset, membership, g: int):
    members = np.asarray(membership) == g
    y1 = data.y[members & (data.z == 1)]
    y0 = data.y[members & (data.z == 0)]
    return y1, y0


def subgroup_dim(data: Dataset, membership, g: int) -> float:
    """Treated mean minus control mean among units assigned to subgroup ``g``."""
    y1, y0 = _arms(data, membership, g)
    if y1.size == 0 or y0.size == 0:
        raise UndefinedEstimate(
            f"subgroup {g} has {y1.size} treated and {y0.size} control units")
    return float(y1.mean() - y0.mean())


def subgroup_variance(data: Dataset, membership, g: int) -> float:
    """Sample-analog variance of the subgroup difference in means.

    ``(1/n_g) * sum_z (n_g / n_g(z)) * s_z^2``, i.e. ``s1^2/n1 + s0^2/n0``,
    with ``s_z^2`` using denominator ``n_g(z) - 1``.
    """
    y1, y0 = _arms(data, membership, g)
    n1, n0 = y1.size, y0.size
    if n1 < 2 or n0 < 2:
        raise UndefinedEstimate(
            f"subgroup {g} needs >= 2 units per arm for a variance (has {n1}/{n0})")
    n_g = n1 + n0
    beta1, beta0 = n_g / n1, n_g / n0
    return float((beta1 * y1.var(ddof=1) + beta0 * y0.var(ddof=1)) / n_g)


def overall_dim(data: Dataset) -> float:
    return float(data.y[data.z == 1].mean() - data.y[data.z == 0].mean())


@dataclass(frozen=True)
class HeterogeneityTest:
    statistic: float
    df: int
    p_value: float
    method: str
    skipped: str | None = None

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "df": self.df, "p_value": self.p_value,
                "method": self.method, "skipped": self.skipped}


def heterogeneity_test(estimates, *, literal: bool = False,
                       overall: float | None = None) -> HeterogeneityTest:
    """Chi-square test that all subgroup effects are equal.

    Default is Cochran's Q: inverse-variance weighted squared deviations from
    the weighted mean effect, ``G - 1`` degrees of freedom. With
    ``literal=True`` deviations are taken from ``overall`` (the whole-sample
    difference in means) with a diagonal covariance and ``G`` degrees of
    freedom. ``estimates`` are objects with ``tau_hat``, ``var_hat`` and
    ``defined`` attributes.
    """
    method = "literal" if literal else "cochran_q"
    nan = float("nan")
    estimates = list(estimates)
    G = len(estimates)
    if G < 2:
        return HeterogeneityTest(nan, 0, nan, method, "fewer than 2 subgroups")
    undefined = [k for k, e in enumerate(estimates)
                 if not getattr(e, "defined", True) or not np.isfinite(e.var_hat)
                 or e.var_hat <= 0]
    if undefined:
        return HeterogeneityTest(nan, 0, nan, method,
                                 f"variance undefined or zero for subgroups {undefined}")
    tau = np.array([e.tau_hat for e in estimates], dtype=float)
    var = np.array([e.var_hat for e in estimates], dtype=float)
    w = 1.0 / var
    if literal:
        if overall is None:
            raise ValueError("the literal test needs the overall difference in means")
        stat = float(np.sum(w * (tau - overall) ** 2))
        df = G
    else:
        center = np.sum(w * tau) / np.sum(w)
        stat = float(np.sum(w * (tau - center) ** 2))
        df = G - 1
    return HeterogeneityTest(stat, df, float(stats.chi2.sf(stat, df)), method)


# ---------------------------------------------------------------- propensity

def logistic_irls(x, z, max_iter: int = 100, tol: float = 1e-8):
    """Logistic regression coefficients (intercept first) by IRLS.

    Returns ``(coef, converged)``.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    design = np.column_stack([np.ones(len(z)), x])
    beta = np.zeros(design.shape[1])
    converged = False
    for _ in range(max_iter):
        eta = np.clip(design @ beta, -35, 35)
        p = 1.0 / (1.0 + np.exp(-eta))
        w = np.maximum(p * (1 - p), 1e-12)
        work = eta + (z - p) / w
        xtw = design.T * w
        new = np.linalg.lstsq(xtw @ design, xtw @ work, rcond=None)[0]
        step = np.max(np.abs(new - beta))
        beta = new
        if step < tol:
            converged = True
            break
    return beta, converged


def predict_propensity(coef, x, clip=PROPENSITY_CLIP) -> np.ndarray:
    eta = coef[0] + np.asarray(x, dtype=float) @ coef[1:]
    return np.clip(1.0 / (1.0 + np.exp(-np.clip(eta, -35, 35))), *clip)


def fit_propensity(x, z, max_iter: int = 100, tol: float = 1e-8,
                   clip=PROPENSITY_CLIP) -> np.ndarray:
    """Estimated P(Z=1 | X) for each row, clipped to ``clip``."""
    z = np.asarray(z)
    if z.min() == z.max():
        raise EstimationError("propensity model needs both treated and control units")
    coef, converged = logistic_irls(x, z, max_iter, tol)
    raw = predict_propensity(coef, x, clip=(0.0, 1.0))
    scores = np.clip(raw, *clip)
    if not converged or np.any(raw != scores):
        hit = np.any((raw <= clip[0]) | (raw >= clip[1]))
        if not converged or hit:
            warnings.warn("propensity fit did not converge or reached the clipping bounds "
                          "(possible separation); returning clipped scores", RuntimeWarning,
                          stacklevel=2)
    return scores


def ipw_weights(z, e_hat) -> np.ndarray:
    z = np.asarray(z)
    e_hat = np.asarray(e_hat, dtype=float)
    return np.where(z == 1, 1.0 / e_hat, 1.0 / (1.0 - e_hat))


def _independent_columns(design: np.ndarray, sw: np.ndarray, tol: float = 1e-10) -> list[int]:
    """Greedy left-to-right selection of linearly independent columns."""
    keep: list[int] = []
    scaled = design * sw[:, None]
    for j in range(design.shape[1]):
        trial = scaled[:, keep + [j]]
        s = np.linalg.svd(trial, compute_uv=False)
        if s[-1] > tol * max(s[0], 1e-300):
            keep.append(j)
    return keep


def dr_weighted_adjusted(data: Dataset, membership, g: int, e_hat) -> tuple[float, float]:
    """Weighted, covariate-adjusted subgroup effect and its sandwich variance.

    Weighted least squares of Y on (1, Z, X) within subgroup ``g`` using
    inverse propensity weights; the effect is the Z coefficient. Variance is
    the heteroskedasticity-robust (HC0) sandwich.
    """
    members = np.asarray(membership) == g
    z = data.z[members]
    n_g = int(members.sum())
    if n_g < data.p + 3:
        raise UndefinedEstimate(f"subgroup {g} has {n_g} units; need at least p + 3 = "
                                f"{data.p + 3}")
    if z.min() == z.max():
        raise UndefinedEstimate(f"subgroup {g} has only one treatment arm")
    e = np.asarray(e_hat, dtype=float)
    if e.shape == ():
        e = np.full(data.n, float(e))
    w = ipw_weights(z, e[members])
    design = np.column_stack([np.ones(n_g), z, data.x[members]])
    y = data.y[members]
    keep = _independent_columns(design, np.sqrt(w))
    if 1 not in keep:
        raise UndefinedEstimate(f"treatment is collinear with covariates in subgroup {g}")
    if len(keep) < design.shape[1]:
        dropped = sorted(set(range(design.shape[1])) - set(keep))
        warnings.warn(f"dropping collinear design columns {dropped} in subgroup {g}",
                      RuntimeWarning, stacklevel=2)
    design = design[:, keep]
    xtw = design.T * w
    bread = np.linalg.inv(xtw @ design)
    coef = bread @ (xtw @ y)
    resid = y - design @ coef
    meat = (design.T * (w * resid) ** 2) @ design
    cov = bread @ meat @ bread
    j = keep.index(1)
    return float(coef[j]), float(cov[j, j])
