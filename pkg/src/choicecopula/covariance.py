"""Outer-product-of-gradients covariance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class OpgCovariance:
    cov: np.ndarray
    flagged: bool
    rank: int

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))


def opg_covariance(per_row_gradients) -> OpgCovariance:
    """Inverse of ``sum_i g_i g_i'``.

    When there are no more rows than parameters, or the sum is numerically
    singular, the Moore-Penrose pseudo-inverse is returned and ``flagged`` is set.
    """
    G = np.asarray(per_row_gradients, dtype=float)
    if G.ndim != 2:
        raise ShapeError("per-row gradients must form an N x P matrix")
    N, P = G.shape
    M = G.T @ G
    M = 0.5 * (M + M.T)
    rank = int(np.linalg.matrix_rank(M, hermitian=True)) if np.any(M) else 0
    if N <= P or rank < P:
        return OpgCovariance(np.linalg.pinv(M, hermitian=True), True, rank)
    L = np.linalg.cholesky(M)
    Linv = np.linalg.solve(L, np.eye(P))
    return OpgCovariance(Linv.T @ Linv, False, rank)
