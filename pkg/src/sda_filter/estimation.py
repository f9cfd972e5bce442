"""Precision acquisition, whitening and the restricted least-squares refit."""

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from sklearn.covariance import graphical_lasso
from sklearn.exceptions import ConvergenceWarning

from .errors import DidNotConverge, InvalidInput, NotPSD, SingularSystem
from .linalg import inv_psd, solve_psd, sqrt_psd, submatrix, sym_matrix

KNOWN = "known"
IDENTITY = "identity"
GLASSO = "glasso"


@dataclass(frozen=True, eq=False)
class PrecisionSpec:
    """How the precision matrix is obtained.

    Build instances with :meth:`known`, :meth:`identity` or
    :meth:`glasso`.  A known spec caches its square root and Gram matrix
    so repeated runs on the same precision reuse them.
    """

    mode: str
    matrix: np.ndarray = None
    penalty: float = None

    @classmethod
    def known(cls, omega):
        omega = sym_matrix(omega)
        if np.linalg.eigvalsh(omega)[0] <= 0:
            raise NotPSD("known precision matrix is not positive definite")
        return cls(KNOWN, matrix=omega)

    @classmethod
    def identity(cls):
        return cls(IDENTITY)

    @classmethod
    def glasso(cls, penalty=None):
        if penalty is not None and penalty < 0:
            raise InvalidInput("graphical lasso penalty must be non-negative")
        return cls(GLASSO, penalty=penalty)

    @cached_property
    def root(self):
        if self.mode != KNOWN:
            raise InvalidInput("only a known precision has a fixed square root")
        return sqrt_psd(self.matrix)

    @cached_property
    def gram(self):
        return self.root.T @ self.root

    def describe(self):
        if self.mode == GLASSO:
            return "glasso" if self.penalty is None else f"glasso({self.penalty:g})"
        return self.mode


def default_glasso_penalty(p, n1):
    return float(np.sqrt(np.log(p) / n1))


def sample_covariance(d):
    """Maximum-likelihood (1/n) covariance of the rows of ``d``."""
    centered = d - d.mean(axis=0)
    return centered.T @ centered / d.shape[0]


def estimate_precision(d1, spec):
    """Return the precision matrix to whiten with, estimating it from ``d1`` if needed."""
    if spec.mode == KNOWN:
        return spec.matrix
    d1 = np.asarray(d1, dtype=float)
    p = d1.shape[1]
    if spec.mode == IDENTITY:
        return np.eye(p)
    if spec.mode != GLASSO:
        raise InvalidInput(f"unknown precision mode {spec.mode!r}")
    n1 = d1.shape[0]
    if n1 < 2:
        raise InvalidInput("graphical lasso needs at least two samples")
    s = sample_covariance(d1)
    if np.linalg.eigvalsh(s)[0] <= 1e-10 * max(np.trace(s) / p, 1e-300):
        s = s + 1e-4 * np.trace(s) / p * np.eye(p)
    lam = spec.penalty if spec.penalty is not None else default_glasso_penalty(p, n1)
    if lam == 0:
        return inv_psd(s)
    with warnings.catch_warnings():
        warnings.simplefilter("error", ConvergenceWarning)
        try:
            _, omega = graphical_lasso(s, alpha=lam, max_iter=200)
        except (ConvergenceWarning, FloatingPointError) as exc:
            raise DidNotConverge(f"graphical lasso failed: {exc}") from exc
    omega = sym_matrix(omega)
    if np.linalg.eigvalsh(omega)[0] <= 0:
        raise DidNotConverge("graphical lasso returned a non-PD estimate")
    return omega


@dataclass(frozen=True)
class WhitenedProblem:
    x: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    n1: int
    n2: int
    gram: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise InvalidInput("split sizes must be positive")
        if not (len(self.y1) == len(self.y2) == self.x.shape[0]):
            raise InvalidInput("whitened responses must have length p")
        if self.gram is None:
            object.__setattr__(self, "gram", self.x.T @ self.x)


def whiten(omega, xi_bar_1, xi_bar_2, n1, n2, root=None, gram=None):
    """Map split means through ``X = omega^{1/2}``."""
    if root is None:
        root = sqrt_psd(omega)
    xb1 = np.asarray(xi_bar_1, dtype=float)
    xb2 = np.asarray(xi_bar_2, dtype=float)
    if xb1.shape != (root.shape[0],) or xb2.shape != (root.shape[0],):
        raise InvalidInput("mean vectors must have length p")
    return WhitenedProblem(root, root @ xb1, root @ xb2, int(n1), int(n2), gram)


@dataclass(frozen=True)
class RefitResult:
    mu2: np.ndarray
    sigma: np.ndarray  # aligned with subset
    subset: np.ndarray
    ridge_fallback: bool = False


def refit_lse(problem, subset, ridge=1e-8):
    """Least squares of ``y2`` on the columns in ``subset``.

    If ``X_S^T X_S`` is numerically singular the fit is repeated with a
    ``ridge * I`` term and ``ridge_fallback`` is set on the result.
    """
    subset = np.asarray(subset, dtype=np.intp)
    if subset.size == 0:
        raise InvalidInput("refit needs a non-empty subset")
    a = submatrix(problem.gram, subset)
    rhs = problem.x[:, subset].T @ problem.y2
    fallback = False
    try:
        cov = inv_psd(a)
    except SingularSystem:
        cov = inv_psd(a + ridge * np.eye(subset.size))
        fallback = True
    mu2 = np.zeros(problem.x.shape[1])
    mu2[subset] = cov @ rhs
    sigma = np.sqrt(np.diag(cov))
    return RefitResult(mu2, sigma, subset, fallback)


def conditional_covariance(sigma, subset):
    """Covariance of ``S`` given its complement, via the Schur complement."""
    sigma = sym_matrix(sigma)
    p = sigma.shape[0]
    subset = np.asarray(subset, dtype=np.intp)
    rest = np.setdiff1d(np.arange(p), subset)
    s_ss = submatrix(sigma, subset)
    if rest.size == 0:
        return s_ss
    s_sr = sigma[np.ix_(subset, rest)]
    s_rr = submatrix(sigma, rest)
    q = s_ss - s_sr @ solve_psd(s_rr, s_sr.T)
    return (q + q.T) / 2.0
