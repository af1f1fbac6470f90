"""GHK simulation of normal rectangle probabilities and multinomial choice probabilities.

Alternatives are indexed from zero throughout the library API.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError, ShapeError
from .stats_core import RngStream, cholesky

_TINY = 1e-300
_SQRT_2PI_INV = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class GhkConfig:
    """Simulation settings for the GHK simulator.

    ``num_draws`` counts every evaluation point; with ``antithetic`` the first
    half of the uniforms are mirrored as ``1 - u`` to fill the second half.
    """

    num_draws: int = 250
    antithetic: bool = True
    master_seed: int = 0

    def __post_init__(self):
        if int(self.num_draws) < 1:
            raise DomainError("num_draws must be at least 1")

    def stream(self, stream_id: int = 0) -> RngStream:
        return RngStream(self.master_seed, stream_id)

    def uniforms(self, stream: RngStream | None, n_obs: int, dim: int) -> np.ndarray:
        """Uniform draws of shape ``(n_obs, num_draws, dim)``.

        Row ``i`` always receives the same block for a given stream, regardless of
        ``n_obs``; this is what makes likelihood evaluation order irrelevant.
        """
        stream = stream if stream is not None else self.stream()
        R = int(self.num_draws)
        if dim <= 0:
            return np.empty((n_obs, R, 0))
        if self.antithetic:
            half = (R + 1) // 2
            base = stream.generator().random((n_obs, half, dim))
            base[base == 0.0] = 2.0**-53
            return np.concatenate([base, 1.0 - base], axis=1)[:, :R, :]
        u = stream.generator().random((n_obs, R, dim))
        u[u == 0.0] = 2.0**-53
        return u


@dataclass(frozen=True)
class UtilitySpec:
    """Systematic utilities of one decision maker plus the utility error covariance."""

    systematic: np.ndarray
    chosen: int
    error_cov: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.systematic, dtype=float)
        S = np.asarray(self.error_cov, dtype=float)
        J = V.size
        if not 0 <= self.chosen < J:
            raise DomainError(f"chosen index {self.chosen} outside 0..{J - 1}")
        if S.shape != (J, J):
            raise ShapeError(f"error_cov must be {J}x{J}, got {S.shape}")
        if not np.allclose(np.diag(S), 1.0, atol=0.0, rtol=0.0):
            raise DomainError("error_cov must have a unit diagonal")
        cholesky(S)
        object.__setattr__(self, "systematic", V)
        object.__setattr__(self, "error_cov", S)


def exchangeable_cov(J: int, a: float) -> np.ndarray:
    """Unit-diagonal J x J covariance with every off-diagonal entry equal to ``a``."""
    if J < 2:
        raise DomainError("need at least two alternatives")
    if not (-1.0 / (J - 1) < a < 1.0):
        raise DomainError(f"exchangeable correlation {a} outside (-1/(J-1), 1)")
    S = np.full((J, J), float(a))
    np.fill_diagonal(S, 1.0)
    return S


def differencing_matrix(J: int, chosen: int) -> np.ndarray:
    """Rows ``e_k - e_chosen`` for every ``k != chosen``, in index order."""
    others = [k for k in range(J) if k != chosen]
    D = np.zeros((J - 1, J))
    D[np.arange(J - 1), others] = 1.0
    D[:, chosen] = -1.0
    return D


def ghk_core(bounds, chol, u, grad=False):
    """Vectorized GHK estimate of P(L eta <= b) for many bound vectors.

    Parameters
    ----------
    bounds : (N, d) array
    chol : (d, d) lower-triangular array with positive diagonal
    u : (N, R, d - 1) uniforms; the last dimension needs no draw
    grad : bool
        Also return the exact derivative of the simulated probability with
        respect to ``bounds`` (the draws are held fixed).

    Returns
    -------
    prob : (N,) array
    dprob : (N, d) array, only when ``grad`` is true
    """
    b = np.asarray(bounds, dtype=float)
    L = np.asarray(chol, dtype=float)
    N, d = b.shape
    etas = []
    detas = []
    prod = None
    dprod = None
    for k in range(d):
        # the first truncation point does not depend on any draw: shape (N, 1)
        shift = 0.0
        for l in range(k):
            shift = shift + L[k, l] * etas[l]
        t = (b[:, k, None] - shift) / L[k, k]
        p = special.ndtr(t)
        if grad:
            dt = np.zeros(np.broadcast_shapes(t.shape, (N, 1)) + (d,))
            dt[..., k] = 1.0
            for l in range(k):
                dt = dt - L[k, l] * detas[l]
            dt /= L[k, k]
            dp = (_SQRT_2PI_INV * np.exp(-0.5 * t * t))[..., None] * dt
            if prod is None:
                dprod = dp
            else:
                dprod = dprod * p[..., None] + prod[..., None] * dp
        prod = p if prod is None else prod * p
        if k < d - 1:
            pk = np.maximum(p, _TINY)
            e = special.ndtri(u[:, :, k] * pk)
            etas.append(e)
            if grad:
                dens = _SQRT_2PI_INV * np.exp(-0.5 * e * e)
                ratio = np.where(p > _TINY, u[:, :, k] / np.maximum(dens, _TINY), 0.0)
                detas.append(ratio[..., None] * dp)
    prob = prod.mean(axis=1)
    if grad:
        return prob, dprod.mean(axis=1)
    return prob


def ghk_rectangle_prob(bounds_upper, chol, cfg: GhkConfig, stream: RngStream | None = None) -> float:
    """GHK estimate of P(L eta <= bounds_upper) with eta standard normal.

    In one dimension the recursion needs no draws and the result is exact.
    """
    b = np.asarray(bounds_upper, dtype=float).ravel()
    L = np.asarray(chol, dtype=float)
    if L.ndim != 2 or L.shape != (b.size, b.size):
        raise ShapeError(f"bounds of length {b.size} do not match chol of shape {L.shape}")
    if np.any(np.triu(L, 1) != 0.0) or np.any(np.diag(L) <= 0.0):
        raise DomainError("chol must be lower triangular with a positive diagonal")
    u = cfg.uniforms(stream, 1, b.size - 1)
    return float(ghk_core(b[None, :], L, u)[0])


def mnp_probabilities(V, chosen, sigma_u, u, grad=False):
    """Simulated multinomial-probit probabilities of the chosen alternatives.

    Parameters
    ----------
    V : (N, J) systematic utilities
    chosen : (N,) zero-based chosen alternatives
    sigma_u : (J, J) utility error covariance
    u : (N, R, J - 2) uniforms (common random numbers)
    grad : bool
        Also return dP/dV, shape (N, J).
    """
    V = np.asarray(V, dtype=float)
    chosen = np.asarray(chosen, dtype=int)
    N, J = V.shape
    out = np.empty(N)
    dV = np.zeros((N, J)) if grad else None
    for j in range(J):
        rows = np.flatnonzero(chosen == j)
        if rows.size == 0:
            continue
        D = differencing_matrix(J, j)
        L = cholesky(D @ sigma_u @ D.T)
        b = -(V[rows] @ D.T)
        if grad:
            p, db = ghk_core(b, L, u[rows], grad=True)
            dV[rows] = -(db @ D)
        else:
            p = ghk_core(b, L, u[rows])
        out[rows] = p
    if grad:
        return out, dV
    return out


def mnp_choice_prob(spec: UtilitySpec, cfg: GhkConfig, stream: RngStream | None = None) -> float:
    """GHK estimate of the probability that ``spec.chosen`` has the highest utility."""
    J = spec.systematic.size
    u = cfg.uniforms(stream, 1, J - 2)
    p = mnp_probabilities(spec.systematic[None, :], np.array([spec.chosen]), spec.error_cov, u)
    return float(p[0])


def mnl_probabilities(V) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    V = np.asarray(V, dtype=float)
    e = np.exp(V - V.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def mnl_choice_prob(spec: UtilitySpec) -> float:
    return float(mnl_probabilities(spec.systematic)[spec.chosen])
