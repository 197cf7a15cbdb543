"""Goodness-of-fit tests for importance-weighted samples.

Weighted samples are reduced to an effective sample size (Kish) for the KS
test; the binned test uses the full sampling covariance of the weighted bin
estimators, so no effective size is needed there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class TestResult:
    __test__ = False   # not a pytest class

    statistic: float
    pvalue: float
    dof: float


def effective_sample_size(weights) -> float:
    """Kish effective size ``(sum w)^2 / sum w^2``."""
    w = np.asarray(weights, dtype=float)
    return float(w.sum() ** 2 / np.sum(w * w))


def weighted_ks(x, weights, cdf) -> TestResult:
    """One-sample KS test of a weighted sample against ``cdf``.

    The weighted empirical CDF is normalized by the weight total; the
    p-value uses the exact KS distribution at the Kish effective size.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(weights, dtype=float)
    order = np.argsort(x)
    x, w = x[order], w[order]
    cw = np.cumsum(w) / w.sum()
    f = cdf(x)
    d = max(np.max(cw - f), np.max(f - np.concatenate(([0.0], cw[:-1]))))
    n = effective_sample_size(w)
    return TestResult(float(d), float(stats.kstwo.sf(d, max(1, int(round(n))))), n)


def weighted_bin_estimates(bins, weights, nbins: int):
    """Unbiased bin-probability estimates ``mean(w 1[bin=k])`` and their covariance."""
    bins = np.asarray(bins)
    w = np.asarray(weights, dtype=float)
    n = len(w)
    ind = np.zeros((n, nbins))
    ind[np.arange(n), bins] = w
    mean = ind.mean(axis=0)
    cov = np.cov(ind, rowvar=False, ddof=1) / n
    return mean, cov


def weighted_chi2(bins, weights, expected, rank_tol: float = 1e-10) -> TestResult:
    """Chi-square test of weighted bin frequencies against ``expected``.

    The statistic is ``d^T C^+ d`` with ``d`` the deviation of the bin
    estimates and ``C^+`` the pseudo-inverse of their sampling covariance.
    Exact linear constraints among the estimates (``sum = 1`` for constant
    weights, or any weight that depends only on the bin) show up as null
    directions of ``C``; they are projected out and the degrees of freedom
    equal the rank of ``C``.
    """
    expected = np.asarray(expected, dtype=float)
    k = len(expected)
    mean, cov = weighted_bin_estimates(bins, weights, k)
    diff = mean - expected
    lam, vec = np.linalg.eigh(cov)
    keep = lam > rank_tol * max(float(lam[-1]), 1e-300)
    proj = vec[:, keep].T @ diff
    stat = float(np.sum(proj * proj / lam[keep]))
    dof = int(keep.sum())
    return TestResult(stat, float(stats.chi2.sf(stat, dof)), dof)
