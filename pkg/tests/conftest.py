import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


def unit_dictionary(rng, m, K):
    P = rng.standard_normal((m, K))
    return P / np.linalg.norm(P, axis=0)


def gauss_jordan_inverse(A):
    """Textbook Gauss-Jordan elimination with partial pivoting."""
    n = len(A)
    M = np.hstack([np.array(A, dtype=float), np.eye(n)])
    for col in range(n):
        pivot = col + int(np.argmax(np.abs(M[col:, col])))
        M[[col, pivot]] = M[[pivot, col]]
        M[col] /= M[col, col]
        for row in range(n):
            if row != col:
                M[row] -= M[row, col] * M[col]
    return M[:, n:]
