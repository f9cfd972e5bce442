"""Comparator procedures: Benjamini-Hochberg and LASSO sample splitting."""

import math

import numpy as np

from .errors import InvalidInput
from .sda import prepare


def bh(pvalues, alpha):
    """Benjamini-Hochberg step-up; returns rejected indices in ascending order."""
    p = np.asarray(pvalues, dtype=float)
    if not 0 < alpha < 1:
        raise InvalidInput("alpha must lie in (0, 1)")
    if p.size and (np.any(~np.isfinite(p)) or p.min() < 0 or p.max() > 1):
        raise InvalidInput("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return np.array([], dtype=np.intp)
    order = np.argsort(p, kind="stable")
    passing = np.flatnonzero(p[order] <= alpha * np.arange(1, m + 1) / m)
    if passing.size == 0:
        return np.array([], dtype=np.intp)
    k = passing[-1] + 1
    return np.sort(order[:k])


def normal_two_sided_p(z):
    return math.erfc(abs(z) / math.sqrt(2.0))


def marginal_z(data, sigma_diag=None):
    """``sqrt(n) * mean / sd`` per column; sample variance when ``sigma_diag`` is None."""
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    if sigma_diag is None:
        sigma_diag = data.var(axis=0, ddof=1)
    return math.sqrt(n) * data.mean(axis=0) / np.sqrt(sigma_diag)


def bh_marginal(data, alpha, sigma_diag=None):
    z = marginal_z(data, sigma_diag)
    return bh([normal_two_sided_p(v) for v in z], alpha)


def ss_from_stage(stage, alpha):
    if stage.refit is None:
        return np.array([], dtype=np.intp)
    subset = stage.refit.subset
    z = math.sqrt(stage.whitened.n2) * stage.refit.mu2[subset] / stage.refit.sigma
    return subset[bh([normal_two_sided_p(v) for v in z], alpha)]


def ss_procedure(data, spec, alpha, options=None, rng=None):
    """Screen with LASSO on the first split, then BH on refit z-values over ``S``."""
    return ss_from_stage(prepare(data, spec, options, rng), alpha)
