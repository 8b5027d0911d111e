"""Small dense symmetric eigensolver (cyclic Jacobi rotations).

Used for the eigenvalue certificates so they do not depend on LAPACK.
Matrices here are at most a few dozen rows, so the O(K^3) sweeps are cheap.
"""
from __future__ import annotations

import numpy as np

SYM_TOL = 1e-10


class NotSymmetricError(ValueError):
    pass


def sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def sym_eig(M, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix.

    Returns ``(w, V)`` with ``w`` ascending and orthonormal columns ``V`` such
    that ``M @ V[:, i] == w[i] * V[:, i]``.
    """
    A = np.array(M, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NotSymmetricError("expected a square matrix")
    n = A.shape[0]
    scale = max(1.0, np.abs(A).max()) if A.size else 1.0
    if n and np.abs(A - A.T).max() > SYM_TOL * scale:
        raise NotSymmetricError("matrix is not symmetric")
    A = sym(A)
    V = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2))
        if off <= 1e-15 * max(np.abs(np.diag(A)).max(initial=0.0), 1e-300) or off == 0.0:
            break
        for i in range(n - 1):
            for j in range(i + 1, n):
                aij = A[i, j]
                if aij == 0.0:
                    continue
                theta = (A[j, j] - A[i, i]) / (2.0 * aij)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J' A J with J the (i, j) rotation
                Ai = A[:, i].copy()
                Aj = A[:, j].copy()
                A[:, i] = c * Ai - s * Aj
                A[:, j] = s * Ai + c * Aj
                Ai = A[i, :].copy()
                Aj = A[j, :].copy()
                A[i, :] = c * Ai - s * Aj
                A[j, :] = s * Ai + c * Aj
                A[i, j] = A[j, i] = 0.0
                Vi = V[:, i].copy()
                V[:, i] = c * Vi - s * V[:, j]
                V[:, j] = s * Vi + c * V[:, j]
    w = np.diag(A).copy()
    order = np.argsort(w)
    return w[order], V[:, order]


def lambda_min(M) -> float:
    return float(sym_eig(M)[0][0]) if np.size(M) else np.inf


def lambda_max(M) -> float:
    return float(sym_eig(M)[0][-1]) if np.size(M) else np.inf


def hyperplane_basis(K: int) -> np.ndarray:
    """Orthonormal basis (``K x (K-1)``) of ``{h : e'h = 0}``."""
    if K < 2:
        return np.zeros((K, 0))
    # Helmert-type basis
    U = np.zeros((K, K - 1))
    for j in range(1, K):
        U[:j, j - 1] = 1.0
        U[j, j - 1] = -j
        U[:, j - 1] /= np.sqrt(j * (j + 1))
    return U
