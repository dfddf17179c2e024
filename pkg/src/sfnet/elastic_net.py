"""Elastic-net sparse coding.

Solves, for an input ``x`` (length m) and a dictionary ``P`` (m x K)::

    alpha* = argmin_a  0.5 * ||x - P a||^2 + lambda1 * ||a||_1 + 0.5 * lambda2 * ||a||^2

The main solver is a LARS-lasso homotopy on the Gram matrix
``G = P^T P + lambda2 * I``, which is the lasso on the augmented system
``[P; sqrt(lambda2) I]``. It follows the piecewise-linear path from
``lambda = max|P^T x|`` down to ``lambda1`` and so identifies the support
exactly. :func:`oracle_solve` is an unrelated cyclic coordinate descent kept
as a reference for testing.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .linalg import cholesky_append, cholesky_delete, cholesky_solve_inplace

DEFAULT_LAMBDA1 = 0.15
DEFAULT_LAMBDA2 = 0.01
DEFAULT_TOLERANCE = 1e-7

# kernel status codes
_OK = 0
_CAPPED = 1
_MAX_ITER = 2
_INDEFINITE = 3


class ElasticNetError(RuntimeError):
    """Raised when the solver cannot produce a valid code.

    Attributes
    ----------
    alpha : ndarray or None
        Best iterate reached before failing.
    kkt : float or None
        KKT residual of ``alpha``.
    """

    def __init__(self, message, alpha=None, kkt=None):
        super().__init__(message)
        self.alpha = alpha
        self.kkt = kkt


@dataclass(frozen=True)
class ElasticNetParams:
    lambda1: float = DEFAULT_LAMBDA1
    lambda2: float = DEFAULT_LAMBDA2
    max_active: int | None = None
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self):
        if not (np.isfinite(self.lambda1) and self.lambda1 >= 0):
            raise ValueError(f"lambda1 must be a nonnegative real, got {self.lambda1}")
        if not (np.isfinite(self.lambda2) and self.lambda2 > 0):
            raise ValueError(f"lambda2 must be positive, got {self.lambda2}")
        if self.max_active is not None and self.max_active < 1:
            raise ValueError(f"max_active must be positive, got {self.max_active}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")

    def active_cap(self, K):
        if self.max_active is None:
            return K
        if self.max_active > K:
            raise ValueError(f"max_active={self.max_active} exceeds the number of atoms K={K}")
        return self.max_active


@dataclass
class SparseCode:
    """Elastic-net solution with its support and reconstruction residual."""

    alpha: np.ndarray
    residual: np.ndarray
    support: np.ndarray = field(init=False)

    def __post_init__(self):
        self.support = np.flatnonzero(self.alpha)


def objective(alpha, x, P, params):
    r = x - P @ alpha
    return 0.5 * r @ r + params.lambda1 * np.abs(alpha).sum() + 0.5 * params.lambda2 * alpha @ alpha


def kkt_residual(code, x, P, params):
    """Largest violation of the elastic-net optimality conditions.

    On the support the stationarity condition
    ``P_j^T (x - P a) = lambda1 * sign(a_j) + lambda2 * a_j`` must hold; off
    the support the correlation must not exceed ``lambda1``.
    """
    alpha = code.alpha
    corr = P.T @ (x - P @ alpha)
    on = alpha != 0
    worst = 0.0
    if on.any():
        a = alpha[on]
        worst = np.max(np.abs(corr[on] - params.lambda1 * np.sign(a) - params.lambda2 * a))
    if (~on).any():
        worst = max(worst, np.max(np.maximum(0.0, np.abs(corr[~on]) - params.lambda1)))
    return float(worst)


@numba.njit(cache=True, nogil=True)
def _lars_single(G, c0, lam1, max_active, max_iter, alpha, L, active, signs, c, d, a, rhs, member):
    """LARS-lasso homotopy for one right-hand side.

    Writes the solution into ``alpha`` and returns (status, iterations).
    The remaining arguments are scratch buffers owned by the caller;
    ``member`` flags the active variables.
    """
    K = G.shape[0]
    eps = 1e-13
    for j in range(K):
        alpha[j] = 0.0
        c[j] = c0[j]
        member[j] = False

    lam = 0.0
    jmax = -1
    for j in range(K):
        if abs(c[j]) > lam:
            lam = abs(c[j])
            jmax = j
    if jmax < 0 or lam <= lam1:
        return _OK, 0

    active[0] = jmax
    signs[0] = 1.0 if c[jmax] > 0 else -1.0
    member[jmax] = True
    L[0, 0] = np.sqrt(G[jmax, jmax])
    n = 1
    dropped = -1
    dropped_sign = 0.0
    status = _MAX_ITER
    it = 0
    while it < max_iter:
        it += 1
        for k in range(n):
            rhs[k] = signs[k]
        cholesky_solve_inplace(L, n, rhs, d)
        # a = G[:, A] d, read row-wise since G is symmetric
        for j in range(K):
            a[j] = 0.0
        for k in range(n):
            row = G[active[k]]
            dk = d[k]
            for j in range(K):
                a[j] += dk * row[j]

        gamma = lam - lam1
        event = 0  # 0 = reached lambda1, 1 = join, 2 = drop
        who = -1
        who_sign = 0.0
        for j in range(K):
            if member[j]:
                continue
            # a variable dropped in the previous step may only re-enter
            # from the opposite side of the correlation band;
            # a variable already on the band (ties, rounding) joins at t = 0
            if a[j] < 1.0 and not (j == dropped and dropped_sign > 0):
                t = max((lam - c[j]) / (1.0 - a[j]), 0.0)
                if t < gamma:
                    gamma = t
                    event = 1
                    who = j
                    who_sign = 1.0
            if a[j] > -1.0 and not (j == dropped and dropped_sign < 0):
                t = max((lam + c[j]) / (1.0 + a[j]), 0.0)
                if t < gamma:
                    gamma = t
                    event = 1
                    who = j
                    who_sign = -1.0
        for k in range(n):
            ak = alpha[active[k]]
            if ak == 0.0:
                # just joined but heading the wrong way: leave immediately
                if d[k] * signs[k] < 0.0 and 0.0 < gamma:
                    gamma = 0.0
                    event = 2
                    who = k
            elif d[k] != 0.0:
                t = -ak / d[k]
                if t > eps and t < gamma:
                    gamma = t
                    event = 2
                    who = k

        for k in range(n):
            alpha[active[k]] += gamma * d[k]
        lam -= gamma
        for j in range(K):
            c[j] -= gamma * a[j]

        dropped = -1
        if event == 0:
            status = _OK
            break
        if event == 2:
            j = active[who]
            dropped_sign = signs[who]
            alpha[j] = 0.0
            member[j] = False
            cholesky_delete(L, n, who)
            for k in range(who, n - 1):
                active[k] = active[k + 1]
                signs[k] = signs[k + 1]
            n -= 1
            dropped = j
            # refresh the correlations from scratch after every drop
            for jj in range(K):
                c[jj] = c0[jj]
            for k in range(n):
                row = G[active[k]]
                ak = alpha[active[k]]
                for jj in range(K):
                    c[jj] -= ak * row[jj]
            if n == 0:
                # path restarts from the empty support at the current lambda
                lam = 0.0
                jmax = -1
                for jj in range(K):
                    if jj != j and abs(c[jj]) > lam:
                        lam = abs(c[jj])
                        jmax = jj
                if jmax < 0 or lam <= lam1:
                    status = _OK
                    break
                active[0] = jmax
                signs[0] = 1.0 if c[jmax] > 0 else -1.0
                member[jmax] = True
                L[0, 0] = np.sqrt(G[jmax, jmax])
                n = 1
            continue
        # join
        if n >= max_active:
            status = _CAPPED
            break
        for k in range(n):
            rhs[k] = G[active[k], who]
        if not cholesky_append(L, n, rhs, G[who, who]):
            return _INDEFINITE, it
        active[n] = who
        signs[n] = who_sign
        member[who] = True
        n += 1

    if status == _OK and n > 0:
        # re-solve the stationarity system on the final support to shed
        # the rounding accumulated along the path
        for k in range(n):
            rhs[k] = c0[active[k]] - lam1 * signs[k]
        cholesky_solve_inplace(L, n, rhs, d)
        consistent = True
        for k in range(n):
            if d[k] * signs[k] <= 0.0:
                consistent = False
        if consistent:
            for k in range(n):
                alpha[active[k]] = d[k]
    return status, it


@numba.njit(cache=True, nogil=True)
def _lars_batch(G, C0, lam1, max_active, max_iter, out, status, iters):
    K = G.shape[0]
    cap = max_active + 1
    L = np.zeros((cap, cap))
    active = np.zeros(cap, dtype=np.int64)
    signs = np.zeros(cap)
    c = np.zeros(K)
    d = np.zeros(cap)
    a = np.zeros(K)
    rhs = np.zeros(cap)
    member = np.zeros(K, dtype=np.bool_)
    for i in range(C0.shape[0]):
        st, it = _lars_single(G, C0[i], lam1, max_active, max_iter, out[i], L, active, signs, c, d, a, rhs, member)
        status[i] = st
        iters[i] = it


def gram(P, lambda2):
    """Return ``P^T P + lambda2 * I``."""
    G = P.T @ P
    G[np.diag_indices_from(G)] += lambda2
    return G


def _check_dictionary(P):
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2:
        raise ValueError(f"dictionary must be a matrix, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ElasticNetError("dictionary has non-finite entries")
    return P


def solve_batch(X, P, params, G=None, threads=1, max_iter=None):
    """Elastic-net codes for every row of ``X``.

    Parameters
    ----------
    X : ndarray, shape (N, m)
    P : ndarray, shape (m, K)
    params : ElasticNetParams
    G : ndarray, optional
        Precomputed ``gram(P, params.lambda2)``; pass it when coding many
        batches against the same dictionary.
    threads : int
        Rows are split into this many contiguous chunks solved concurrently.
        Every row is solved independently, so the result does not depend on
        the thread count.

    Returns
    -------
    ndarray, shape (N, K)
    """
    P = _check_dictionary(P)
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != P.shape[0]:
        raise ValueError(f"inputs of shape {X.shape} do not match dictionary {P.shape}")
    if not np.all(np.isfinite(X)):
        raise ElasticNetError("input has non-finite entries")
    K = P.shape[1]
    cap = params.active_cap(K)
    if max_iter is None:
        max_iter = 8 * K + 100
    if G is None:
        G = gram(P, params.lambda2)
    C0 = X @ P
    N = X.shape[0]
    out = np.zeros((N, K))
    status = np.zeros(N, dtype=np.int64)
    iters = np.zeros(N, dtype=np.int64)
    if threads <= 1 or N < 2 * threads:
        _lars_batch(G, C0, params.lambda1, cap, max_iter, out, status, iters)
    else:
        bounds = np.linspace(0, N, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            jobs = [
                pool.submit(_lars_batch, G, C0[lo:hi], params.lambda1, cap, max_iter,
                            out[lo:hi], status[lo:hi], iters[lo:hi])
                for lo, hi in zip(bounds[:-1], bounds[1:])
            ]
            for job in jobs:
                job.result()
    bad = np.flatnonzero(status >= _MAX_ITER)
    if bad.size:
        i = int(bad[0])
        code = SparseCode(out[i].copy(), X[i] - P @ out[i])
        kkt = kkt_residual(code, X[i], P, params)
        reason = "iteration cap exceeded" if status[i] == _MAX_ITER else "indefinite active Gram matrix"
        err = ElasticNetError(f"elastic-net solve failed on row {i}: {reason} (KKT residual {kkt:.3g})",
                              alpha=code.alpha, kkt=kkt)
        err.row = i
        raise err
    return out


def solve(x, P, params=None):
    """Elastic-net code of a single vector.

    >>> import numpy as np
    >>> code = solve(np.array([1.0, 0.2]), np.eye(2), ElasticNetParams(0.5, 1e-12))
    >>> np.round(code.alpha, 6)
    array([0.5, 0. ])
    """
    params = params or ElasticNetParams()
    P = _check_dictionary(P)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"x must be a vector, got shape {x.shape}")
    alpha = solve_batch(x[None, :], P, params)[0]
    return SparseCode(alpha, x - P @ alpha)


def oracle_solve(x, P, params=None, tol=1e-10, max_sweeps=200_000):
    """Reference solution by cyclic coordinate descent.

    Each coordinate is minimized exactly with the soft-threshold
    ``a_j = S(P_j^T r + ||P_j||^2 a_j, lambda1) / (||P_j||^2 + lambda2)``.
    Sweeps alternate between the current nonzeros and all coordinates and
    stop once the KKT residual drops below ``tol``.
    """
    params = params or ElasticNetParams()
    x = np.asarray(x, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(P))):
        raise ElasticNetError("non-finite input to oracle")
    lam1, lam2 = params.lambda1, params.lambda2
    K = P.shape[1]
    H = P.T @ P
    q = P.T @ x
    diag = np.diag(H).copy()
    alpha = np.zeros(K)
    Ha = np.zeros(K)

    def sweep(indices):
        for j in indices:
            old = alpha[j]
            z = q[j] - Ha[j] + diag[j] * old
            new = np.sign(z) * max(abs(z) - lam1, 0.0) / (diag[j] + lam2)
            if new != old:
                Ha[:] += H[:, j] * (new - old)
                alpha[j] = new

    everything = np.arange(K)
    for _ in range(max_sweeps):
        sweep(everything)
        for _ in range(50):
            nz = np.flatnonzero(alpha)
            if nz.size == 0:
                break
            sweep(nz)
        code = SparseCode(alpha.copy(), x - P @ alpha)
        if kkt_residual(code, x, P, params) < tol:
            return code
    code = SparseCode(alpha.copy(), x - P @ alpha)
    raise ElasticNetError("coordinate descent did not converge", alpha=code.alpha,
                          kkt=kkt_residual(code, x, P, params))
