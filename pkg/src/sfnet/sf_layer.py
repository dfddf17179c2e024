"""Sparse factorization (SF) layer.

The forward pass replaces ``a = P x`` by the elastic-net code
``a = alpha*(x, P)``. The backward pass differentiates through the solution
on its support ``S``: with ``b[S] = (P_S^T P_S + lambda2 I)^-1 g[S]`` and
``b = 0`` elsewhere,

    dL/dP = -P b a^T + (x - P a) b^T
    dL/dx = P b

Everything here is batched: inputs are ``(N, m)``, codes ``(N, K)``. Gradients
of the batch loss are the sums of per-sample gradients; the networks in
:mod:`sfnet.nn` use a batch-mean loss, so per-sample contributions arrive
already scaled by ``1/N``.
"""

from dataclasses import dataclass

import numba
import numpy as np

from .elastic_net import ElasticNetError, ElasticNetParams, SparseCode, gram, solve_batch
from .linalg import cholesky_inplace, cholesky_solve_inplace


@dataclass
class SfContext:
    """What the backward pass needs from the forward pass."""

    inputs: np.ndarray
    codes: np.ndarray
    residuals: np.ndarray
    params: ElasticNetParams
    gram: np.ndarray

    def code(self, i):
        return SparseCode(self.codes[i], self.residuals[i])


def init_dictionary(m, K, rng):
    """Gaussian atoms scaled to unit norm."""
    P = rng.standard_normal((m, K))
    return P / np.linalg.norm(P, axis=0, keepdims=True)


def renormalize(P):
    """Scale every column with norm above one back onto the unit sphere, in place."""
    norms = np.linalg.norm(P, axis=0)
    over = norms > 1.0
    if over.any():
        P[:, over] /= norms[over]
    return P


def sf_forward(X, P, params, threads=1):
    """Code a batch of inputs against dictionary ``P``.

    Parameters
    ----------
    X : ndarray, shape (N, m) or (m,)
    P : ndarray, shape (m, K)

    Returns
    -------
    codes : ndarray, shape (N, K) (or (K,) for a single vector)
    ctx : SfContext
    """
    single = np.ndim(X) == 1
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    G = gram(P, params.lambda2)
    A = solve_batch(X, P, params, G=G, threads=threads)
    ctx = SfContext(X, A, X - A @ P.T, params, G)
    return (A[0] if single else A), ctx


@numba.njit(cache=True, nogil=True)
def _aux_vectors(G, A, grad, B):
    K = G.shape[0]
    idx = np.empty(K, dtype=np.int64)
    sub = np.empty((K, K))
    L = np.zeros((K, K))
    rhs = np.empty(K)
    out = np.empty(K)
    for i in range(A.shape[0]):
        n = 0
        for j in range(K):
            if A[i, j] != 0.0:
                idx[n] = j
                n += 1
        if n == 0:
            continue
        for p in range(n):
            rhs[p] = grad[i, idx[p]]
            for q in range(n):
                sub[p, q] = G[idx[p], idx[q]]
        if not cholesky_inplace(sub, L, n):
            return i
        cholesky_solve_inplace(L, n, rhs, out)
        for p in range(n):
            B[i, idx[p]] = out[p]
    return -1


def compute_b(ctx, grad_a):
    """Auxiliary vectors ``b`` for a batch; zero off each sample's support."""
    grad_a = np.atleast_2d(np.asarray(grad_a, dtype=np.float64))
    if grad_a.shape != ctx.codes.shape:
        raise ValueError(f"gradient shape {grad_a.shape} does not match codes {ctx.codes.shape}")
    B = np.zeros_like(ctx.codes)
    bad = _aux_vectors(ctx.gram, ctx.codes, np.ascontiguousarray(grad_a), B)
    if bad >= 0:
        raise ElasticNetError(f"active Gram matrix of sample {bad} is not positive-definite")
    return B


def sf_backward(ctx, P, grad_a, B=None):
    """Gradients of the loss with respect to the dictionary and the input.

    Returns
    -------
    grad_P : ndarray, shape (m, K)
        Summed over the batch.
    grad_x : ndarray, shape (N, m)
    """
    if B is None:
        B = compute_b(ctx, grad_a)
    A = ctx.codes
    grad_P = ctx.residuals.T @ B - P @ (B.T @ A)
    grad_x = B @ P.T
    return grad_P, grad_x


def unsup_loss(ctx):
    """Elastic-net objective at the computed codes, summed over the batch."""
    R = ctx.residuals
    A = ctx.codes
    p = ctx.params
    return float(0.5 * np.sum(R * R) + p.lambda1 * np.abs(A).sum() + 0.5 * p.lambda2 * np.sum(A * A))


def unsup_grads(ctx):
    """Gradients of :func:`unsup_loss`.

    By the envelope property the code can be held fixed:
    ``dl/dP = -(x - P a) a^T`` and ``dl/dx = x - P a``.
    """
    R = ctx.residuals
    return -R.T @ ctx.codes, R.copy()
