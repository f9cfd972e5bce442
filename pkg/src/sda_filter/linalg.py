"""Dense symmetric-matrix primitives.

Every matrix handled by the pipeline (covariances, precisions, Gram
matrices of the whitened design) is small enough to store densely, so
everything here works on plain ``numpy`` arrays.  ``sym_matrix`` is the
single entry point that validates and exactly symmetrizes an input.
"""

from typing import NamedTuple

import numpy as np
from numba import njit

from .errors import InvalidInput, NotPSD, NumericalFailure, SingularSystem

# relative asymmetry tolerated before a matrix is rejected as non-symmetric
_SYM_RTOL = 1e-8


class EigenDecomposition(NamedTuple):
    values: np.ndarray  # descending
    vectors: np.ndarray  # columns are orthonormal eigenvectors


def max_abs(a):
    return float(np.max(np.abs(a))) if a.size else 0.0


def sym_matrix(a):
    """Validate ``a`` and return an exactly symmetric float copy."""
    a = np.array(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidInput(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("matrix has non-finite entries")
    scale = max(max_abs(a), 1.0)
    if max_abs(a - a.T) > _SYM_RTOL * scale:
        raise InvalidInput("matrix is not symmetric")
    # (x + y) / 2 is commutative in IEEE arithmetic, so this is exact symmetry
    return (a + a.T) / 2.0


@njit(cache=True)
def _jacobi_kernel(a, tol, max_sweeps):
    n = a.shape[0]
    v = np.eye(n)
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale += a[i, j] * a[i, j]
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += a[i, j] * a[i, j]
        if off <= tol * tol * scale or off == 0.0:
            return v, sweep, True
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return v, max_sweeps, False


def jacobi_eigen(a, tol=1e-14, max_sweeps=100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix."""
    a = sym_matrix(a)
    work = a.copy()
    v, _, ok = _jacobi_kernel(work, tol, max_sweeps)
    if not ok:
        raise NumericalFailure(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    vals = np.diag(work).copy()
    order = np.argsort(-vals, kind="stable")
    return EigenDecomposition(vals[order], v[:, order])


def sym_eigen(a, method="lapack"):
    """Eigendecomposition with eigenvalues sorted in descending order.

    ``method="lapack"`` uses ``numpy.linalg.eigh``; ``method="jacobi"``
    uses the in-house cyclic Jacobi solver (slower, kept as an
    independent route).
    """
    if method == "jacobi":
        return jacobi_eigen(a)
    if method != "lapack":
        raise InvalidInput(f"unknown eigen method {method!r}")
    a = sym_matrix(a)
    try:
        vals, vecs = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(str(exc)) from exc
    return EigenDecomposition(vals[::-1].copy(), vecs[:, ::-1].copy())


def sqrt_psd(a, eig_floor=None, method="lapack"):
    """Symmetric PSD square root; eigenvalues in ``[-eig_floor, 0)`` clamp to 0."""
    a = sym_matrix(a)
    if eig_floor is None:
        eig_floor = 1e-10 * max_abs(a)
    vals, vecs = sym_eigen(a, method=method)
    if vals[-1] < -eig_floor:
        raise NotPSD(f"smallest eigenvalue {vals[-1]:.3g} below -{eig_floor:.3g}")
    root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    return (root + root.T) / 2.0


def _check_pd(a):
    vals = np.linalg.eigvalsh(a)
    if vals[0] <= 1e-12 * max(max_abs(a), 1e-300):
        raise SingularSystem(f"matrix is singular or indefinite (min eigenvalue {vals[0]:.3g})")


def solve_psd(a, b):
    a = sym_matrix(a)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != a.shape[0]:
        raise InvalidInput("right-hand side has the wrong length")
    _check_pd(a)
    try:
        factor = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    z = np.linalg.solve(factor, b)
    return np.linalg.solve(factor.T, z)


def inv_psd(a):
    a = sym_matrix(a)
    out = solve_psd(a, np.eye(a.shape[0]))
    return (out + out.T) / 2.0


def submatrix(a, idx):
    idx = np.asarray(idx, dtype=np.intp)
    n = a.shape[0]
    if idx.ndim != 1 or idx.size == 0:
        raise InvalidInput("index set must be a non-empty 1-D sequence")
    if idx[0] < 0 or idx[-1] >= n or np.any(np.diff(idx) <= 0):
        raise InvalidInput("index set must be strictly increasing and within range")
    return a[np.ix_(idx, idx)]
