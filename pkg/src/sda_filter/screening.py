"""LASSO screening on the first half of the split.

The objective is the unnormalized one used throughout the package::

    L(mu) = ||y - X mu||^2 + lam * ||mu||_1

(no 1/2 and no 1/n factor), so the all-zero solution kicks in at
``lam >= 2 * ||X^T y||_inf`` and an orthogonal design soft-thresholds at
``lam / 2``.  The solver works on the Gram matrix ``X^T X``, which is
cheap here because the design is square.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .errors import DidNotConverge, InvalidInput


@dataclass(frozen=True)
class LassoProblem:
    design: np.ndarray
    response: np.ndarray
    penalty: float

    def __post_init__(self):
        x = np.asarray(self.design, dtype=float)
        y = np.asarray(self.response, dtype=float)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise InvalidInput("design rows must match response length")
        if not self.penalty >= 0:
            raise InvalidInput("penalty must be non-negative")
        object.__setattr__(self, "design", x)
        object.__setattr__(self, "response", y)


@dataclass(frozen=True)
class ScreeningResult:
    coefficients: np.ndarray
    selected: np.ndarray
    penalty_used: float
    aic_value: float
    flags: tuple = field(default=())


def objective(design, response, coef, penalty):
    r = response - design @ coef
    return float(r @ r + penalty * np.sum(np.abs(coef)))


@njit(cache=True)
def _kkt_violation(r, mu, lam):
    worst = 0.0
    for j in range(mu.shape[0]):
        if mu[j] != 0.0:
            s = 1.0 if mu[j] > 0.0 else -1.0
            v = abs(-2.0 * r[j] + lam * s)
        else:
            v = abs(2.0 * r[j]) - lam
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def _cd_pass(gram, r, mu, half, coords):
    biggest = 0.0
    for j in coords:
        gjj = gram[j, j]
        old = mu[j]
        z = r[j] + gjj * old
        if z > half:
            new = (z - half) / gjj
        elif z < -half:
            new = (z + half) / gjj
        else:
            new = 0.0
        if new != old:
            d = new - old
            # gram is symmetric; row j is contiguous
            for k in range(r.shape[0]):
                r[k] -= d * gram[j, k]
            mu[j] = new
            if abs(d) * gjj > biggest:
                biggest = abs(d) * gjj
    return biggest


@njit(cache=True)
def _cd_kernel(gram, xty, lam, mu, tol, max_sweeps):
    """Full sweeps over 0..p-1, each followed by passes over the active set.

    Returns (sweeps used, converged).
    """
    p = xty.shape[0]
    half = lam / 2.0
    r = xty - gram @ mu
    everything = np.arange(p)
    for sweep in range(max_sweeps):
        _cd_pass(gram, r, mu, half, everything)
        if _kkt_violation(r, mu, lam) <= tol:
            # refresh the residual to rule out drift from incremental updates
            r = xty - gram @ mu
            if _kkt_violation(r, mu, lam) <= tol:
                return sweep + 1, True
        active = np.flatnonzero(mu)
        for _ in range(max_sweeps):
            if _cd_pass(gram, r, mu, half, active) <= tol / 4.0:
                break
    return max_sweeps, False


def default_tol(p):
    return 1e-7 * p


def lasso_cd(problem, tol=None, max_sweeps=10000, init=None, gram=None):
    """Cyclic coordinate descent for a single penalty value.

    Coordinates are visited in the fixed order 0..p-1 on every sweep.
    Returns the coefficient vector once the KKT residuals are within
    ``tol``; otherwise raises ``DidNotConverge`` carrying the last
    iterate.
    """
    x, y, lam = problem.design, problem.response, float(problem.penalty)
    p = x.shape[1]
    if tol is None:
        tol = default_tol(p)
    if tol <= 0:
        raise InvalidInput("tol must be positive")
    if gram is None:
        gram = x.T @ x
    if np.any(np.diag(gram) <= 0):
        raise InvalidInput("design has an all-zero column")
    mu = np.zeros(p) if init is None else np.array(init, dtype=float)
    _, ok = _cd_kernel(gram, x.T @ y, lam, mu, float(tol), int(max_sweeps))
    if not ok:
        raise DidNotConverge(f"coordinate descent hit {max_sweeps} sweeps at lambda={lam:.4g}", best=mu)
    return mu


def lambda_max(design, response):
    return 2.0 * float(np.max(np.abs(design.T @ response)))


def default_grid(design, response, n_lambda=50, min_ratio=1e-3):
    """Log-spaced penalties from ``lambda_max`` down to ``min_ratio * lambda_max``."""
    top = lambda_max(design, response)
    if top == 0.0:
        return np.array([1.0])
    return top * np.logspace(0.0, np.log10(min_ratio), n_lambda)


def aic(n1, rss, support_size):
    return n1 * rss + 2.0 * support_size


def lasso_path_aic(design, response, grid, n1, tol=None, max_sweeps=10000, gram=None):
    """Warm-started LASSO path; returns the grid point with the smallest AIC."""
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise InvalidInput("lambda grid must be non-empty")
    if np.any(grid <= 0) or np.any(np.diff(grid) >= 0):
        raise InvalidInput("lambda grid must be positive and strictly descending")
    if n1 < 1:
        raise InvalidInput("n1 must be at least 1")
    if gram is None:
        gram = design.T @ design

    p = design.shape[1]
    mu = np.zeros(p)
    best = None
    failures = 0
    for lam in grid:
        problem = LassoProblem(design, response, lam)
        try:
            mu = lasso_cd(problem, tol=tol, max_sweeps=max_sweeps, init=mu, gram=gram)
        except DidNotConverge as exc:
            warnings.warn(f"skipping grid point: {exc}", RuntimeWarning, stacklevel=2)
            failures += 1
            mu = exc.best
            continue
        resid = response - design @ mu
        score = aic(n1, float(resid @ resid), np.count_nonzero(mu))
        if best is None or score < best[0]:
            best = (score, lam, mu.copy())
    if best is None:
        raise DidNotConverge("no grid point converged")
    score, lam, coef = best
    flags = ("lasso_nonconvergence",) if failures else ()
    return ScreeningResult(coef, np.flatnonzero(coef), float(lam), float(score), flags)


def cap_selection(result, cap):
    """Keep at most ``cap`` features, largest |coefficient| first, ties to the smaller index."""
    if cap < 1:
        raise InvalidInput("cap must be at least 1")
    sel = result.selected
    if sel.size <= cap:
        return result
    mags = np.abs(result.coefficients[sel])
    order = np.lexsort((sel, -mags))
    keep = np.sort(sel[order[:cap]])
    coef = np.zeros_like(result.coefficients)
    coef[keep] = result.coefficients[keep]
    return replace(result, coefficients=coef, selected=keep)
