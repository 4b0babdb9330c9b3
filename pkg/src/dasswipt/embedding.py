"""Real symmetric embedding of complex Hermitian matrices.

A Hermitian ``X = A + iB`` (``A`` symmetric, ``B`` skew) maps to
``[[A, -B], [B, A]]``. The map preserves positive semidefiniteness and
doubles traces of products: ``Tr(embed(H) embed(X)) = 2 Re Tr(H X)``.

Dual matrices returned by a real conic solver pair with the embedded
primal through ``Tr(Zhat Xhat)``. :func:`dual_to_complex` folds such a
``Zhat`` into the complex ``Z`` with ``Tr(Zhat Xhat) = Re Tr(Z X)``; this is
the sum of the diagonal blocks, not their average, which is where the factor
of two goes.
"""
from __future__ import annotations

import numpy as np

from .errors import StructuralError


def embed(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    A, B = X.real, X.imag
    return np.block([[A, -B], [B, A]])


def unembed(Xhat: np.ndarray) -> np.ndarray:
    """Inverse of :func:`embed`, averaging the redundant blocks."""
    Xhat = np.asarray(Xhat, dtype=float)
    if Xhat.ndim != 2 or Xhat.shape[0] != Xhat.shape[1] or Xhat.shape[0] % 2:
        raise StructuralError(f"embedded matrix must be square of even size, got {Xhat.shape}")
    n = Xhat.shape[0] // 2
    A = 0.5 * (Xhat[:n, :n] + Xhat[n:, n:])
    B = 0.5 * (Xhat[n:, :n] - Xhat[:n, n:])
    X = A + 1j * B
    return 0.5 * (X + X.conj().T)


def dual_to_complex(Zhat: np.ndarray) -> np.ndarray:
    """Complex Hermitian Z with Tr(Zhat embed(X)) = Re Tr(Z X) for every Hermitian X."""
    return 2.0 * unembed(Zhat)


def skew_basis(n: int) -> np.ndarray:
    """Matrix T with vec_F(B) = T b mapping n(n-1)/2 free entries to a skew-symmetric B."""
    pairs = [(i, j) for j in range(n) for i in range(j)]
    T = np.zeros((n * n, len(pairs)))
    for col, (i, j) in enumerate(pairs):
        T[i + j * n, col] = 1.0
        T[j + i * n, col] = -1.0
    return T


def trace_inner(H: np.ndarray, A, B):
    """Re Tr(H X) for Hermitian H and X = A + iB; works with numpy or cvxpy A, B."""
    Hr, Hi = np.real(H), np.imag(H)
    # Tr(Hr A) - Tr(Hi B) with Hi, B skew equals sum(Hr*A) + sum(Hi*B)
    if isinstance(A, np.ndarray):
        return float(np.sum(Hr * A) + np.sum(Hi * B))
    import cvxpy as cp

    return cp.sum(cp.multiply(Hr, A)) + cp.sum(cp.multiply(Hi, B))
