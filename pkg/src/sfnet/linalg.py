"""Small dense linear-algebra kernels.

Arrays are plain row-major ``float64`` numpy arrays. The Cholesky routines
are compiled with numba because the elastic-net solver and the sparse
layers call them once per sample (or per patch) on tiny systems, where
LAPACK call overhead dominates.
"""

from dataclasses import dataclass

import numba
import numpy as np


class LinalgError(ValueError):
    """Shape mismatch or numerically indefinite matrix."""


@numba.njit(cache=True, nogil=True)
def cholesky_inplace(A, L, n):
    """Factor the leading ``n x n`` block of ``A`` into ``L``.

    Returns False on a non-positive pivot.
    """
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return False
        d = np.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, n):
            t = A[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / d
        for i in range(j):
            L[i, j] = 0.0
    return True


@numba.njit(cache=True, nogil=True)
def cholesky_solve_inplace(L, n, b, out):
    """Solve ``L L^T out = b`` using the leading ``n x n`` block of ``L``."""
    for i in range(n):
        t = b[i]
        for k in range(i):
            t -= L[i, k] * out[k]
        out[i] = t / L[i, i]
    for i in range(n - 1, -1, -1):
        t = out[i]
        for k in range(i + 1, n):
            t -= L[k, i] * out[k]
        out[i] = t / L[i, i]


@numba.njit(cache=True, nogil=True)
def cholesky_append(L, n, g, diag):
    """Grow the factor of an ``n x n`` matrix by one row and column.

    ``g`` holds the new off-diagonal column and ``diag`` the new diagonal
    entry. Returns False if the enlarged matrix is not positive-definite.
    """
    for i in range(n):
        t = g[i]
        for k in range(i):
            t -= L[i, k] * L[n, k]
        L[n, i] = t / L[i, i]
    s = diag
    for k in range(n):
        s -= L[n, k] * L[n, k]
    if not s > 0.0:
        return False
    L[n, n] = np.sqrt(s)
    for i in range(n):
        L[i, n] = 0.0
    return True


@numba.njit(cache=True, nogil=True)
def cholesky_delete(L, n, p):
    """Remove row and column ``p`` from the factored ``n x n`` matrix.

    The factor is updated in place with Givens rotations, in ``O(n^2)``;
    afterwards the leading ``(n - 1) x (n - 1)`` block of ``L`` factors the
    reduced matrix.
    """
    for i in range(p, n - 1):
        for j in range(i + 2):
            L[i, j] = L[i + 1, j]
    for k in range(p, n - 1):
        x = L[k, k]
        y = L[k, k + 1]
        r = np.hypot(x, y)
        cs = x / r
        sn = y / r
        for i in range(k, n - 1):
            u = L[i, k]
            v = L[i, k + 1]
            L[i, k] = cs * u + sn * v
            L[i, k + 1] = cs * v - sn * u
        L[k, k + 1] = 0.0
    for i in range(n):
        L[i, n - 1] = 0.0
        L[n - 1, i] = 0.0


@dataclass(frozen=True)
class SpdFactor:
    """Lower-triangular Cholesky factor of a symmetric positive-definite matrix."""

    factor: np.ndarray

    @property
    def size(self):
        return self.factor.shape[0]

    def reconstruct(self):
        return self.factor @ self.factor.T


def _as_matrix(A, name="A"):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise LinalgError(f"{name} must be a matrix, got shape {A.shape}")
    return A


def matvec(A, x):
    """Matrix-vector product with explicit shape checking."""
    A = _as_matrix(A)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or A.shape[1] != x.shape[0]:
        raise LinalgError(f"cannot multiply A{A.shape} by x{x.shape}")
    return A @ x


def chol_factor(A):
    """Cholesky-factor a symmetric positive-definite matrix.

    Raises
    ------
    LinalgError
        If ``A`` is not square or a pivot is non-positive (the matrix is
        numerically indefinite).
    """
    A = _as_matrix(A)
    n, n2 = A.shape
    if n != n2:
        raise LinalgError(f"Cholesky needs a square matrix, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise LinalgError("matrix has non-finite entries")
    L = np.zeros((n, n))
    if not cholesky_inplace(np.ascontiguousarray(A), L, n):
        raise LinalgError("non-positive pivot: matrix is not positive-definite")
    return SpdFactor(L)


def chol_solve(F, b):
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (F.size,):
        raise LinalgError(f"right-hand side shape {b.shape} does not match factor size {F.size}")
    out = np.empty(F.size)
    cholesky_solve_inplace(F.factor, F.size, b, out)
    return out
