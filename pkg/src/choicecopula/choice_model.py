"""Polychotomous choice model: multinomial probit (GHK) or logit.

Utilities are ``V_ij = vl_ij + z_i beta_j`` with the wage coefficient fixed at 1
and the base alternative's ``beta`` row fixed at zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .errors import DegenerateChoiceError, DomainError, SeparationWarning, ShapeError
from .ghk import GhkConfig, exchangeable_cov, mnl_probabilities, mnp_probabilities
from .stats_core import RngStream

PROB_FLOOR = 1e-12
CHOICE_STREAM_ID = 1


@dataclass
class ChoiceParams:
    """Choice coefficients ``beta`` (J x kz) and kernel settings."""

    beta: np.ndarray
    base: int
    kernel: str = "probit"
    ghk: GhkConfig = field(default_factory=GhkConfig)
    a: float = 0.0
    z_names: tuple = ()

    def __post_init__(self):
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        J = self.beta.shape[0]
        if self.kernel not in ("probit", "logit"):
            raise DomainError(f"unknown kernel {self.kernel!r}")
        if not 0 <= self.base < J:
            raise DomainError(f"base alternative {self.base} outside 0..{J - 1}")
        if np.any(self.beta[self.base] != 0.0):
            raise DomainError("the base alternative's coefficients must be zero")
        self.z_names = tuple(self.z_names)

    wage_coefficient = 1.0

    @property
    def n_alternatives(self) -> int:
        return self.beta.shape[0]

    @property
    def free_rows(self) -> list:
        return [j for j in range(self.n_alternatives) if j != self.base]

    @property
    def sigma_u(self) -> np.ndarray:
        return exchangeable_cov(self.n_alternatives, self.a)

    def free_vector(self) -> np.ndarray:
        return self.beta[self.free_rows].ravel().copy()

    def with_free(self, theta) -> "ChoiceParams":
        beta = np.zeros_like(self.beta)
        beta[self.free_rows] = np.asarray(theta, dtype=float).reshape(len(self.free_rows), -1)
        return replace(self, beta=beta)

    def free_names(self) -> list:
        names = self.z_names or tuple(f"z{k}" for k in range(self.beta.shape[1]))
        return [f"beta[{j}]:{c}" for j in self.free_rows for c in names]

    @classmethod
    def zeros(cls, J, kz, base=None, **kwargs) -> "ChoiceParams":
        return cls(np.zeros((J, kz)), J - 1 if base is None else base, **kwargs)

    def to_dict(self):
        return {
            "beta": self.beta.tolist(),
            "base": int(self.base),
            "kernel": self.kernel,
            "a": float(self.a),
            "wage_coefficient": 1.0,
            "ghk": {
                "num_draws": int(self.ghk.num_draws),
                "antithetic": bool(self.ghk.antithetic),
                "master_seed": int(self.ghk.master_seed),
            },
            "z_names": list(self.z_names),
        }


def _as_vl(outcomes):
    return np.asarray(getattr(outcomes, "normalized_wage", outcomes), dtype=float)


class ChoiceProblem:
    """Likelihood of the observed choices with the simulation draws held fixed.

    The uniforms for the probit kernel are generated once from ``stream`` so that
    every evaluation uses identical draws (common random numbers).
    """

    def __init__(self, z, vl, chosen, kernel="probit", ghk=None, a=0.0, base=None,
                 stream: RngStream | None = None):
        self.z = np.asarray(z, dtype=float)
        self.vl = np.asarray(vl, dtype=float)
        self.chosen = np.asarray(chosen, dtype=int)
        n, J = self.vl.shape
        if self.z.shape[0] != n or self.chosen.shape != (n,):
            raise ShapeError("z, vl and chosen must have the same number of rows")
        if np.any(self.chosen < 0) or np.any(self.chosen >= J):
            raise DomainError("chosen alternative out of range")
        self.kernel = kernel
        self.ghk = ghk if ghk is not None else GhkConfig()
        self.a = float(a)
        self.base = J - 1 if base is None else int(base)
        self.stream = stream if stream is not None else self.ghk.stream(CHOICE_STREAM_ID)
        self.sigma_u = exchangeable_cov(J, self.a)
        self.free_rows = [j for j in range(J) if j != self.base]
        self._u = None

    @property
    def n(self) -> int:
        return self.vl.shape[0]

    @property
    def n_alternatives(self) -> int:
        return self.vl.shape[1]

    @property
    def uniforms(self):
        if self._u is None:
            self._u = self.ghk.uniforms(self.stream, self.n, self.n_alternatives - 2)
        return self._u

    def beta_from(self, theta):
        kz = self.z.shape[1]
        beta = np.zeros((self.n_alternatives, kz))
        beta[self.free_rows] = np.asarray(theta, dtype=float).reshape(len(self.free_rows), kz)
        return beta

    def utilities(self, beta, z=None, vl=None):
        z = self.z if z is None else z
        vl = self.vl if vl is None else vl
        return vl + z @ beta.T

    def chosen_probs(self, beta, grad=False, V=None, chosen=None):
        """P(I_i = chosen_i) and optionally dP/dV."""
        V = self.utilities(beta) if V is None else V
        chosen = self.chosen if chosen is None else chosen
        if self.kernel == "logit":
            P = mnl_probabilities(V)
            p = P[np.arange(V.shape[0]), chosen]
            if not grad:
                return p
            onehot = np.zeros_like(P)
            onehot[np.arange(V.shape[0]), chosen] = 1.0
            return p, p[:, None] * (onehot - P)
        return mnp_probabilities(V, chosen, self.sigma_u, self.uniforms, grad=grad)

    def all_probs(self, beta, z=None, vl=None, normalize=False):
        """N x J matrix of probabilities of every alternative under common draws."""
        V = self.utilities(beta, z, vl)
        if self.kernel == "logit":
            return mnl_probabilities(V)
        n = V.shape[0]
        P = np.column_stack([
            mnp_probabilities(V, np.full(n, j), self.sigma_u, self.uniforms) for j in range(V.shape[1])
        ])
        if normalize:
            P = P / P.sum(axis=1, keepdims=True)
        return P

    def scores(self, theta):
        """Log-likelihood, its gradient and per-row scores at ``theta``."""
        beta = self.beta_from(theta)
        p, dV = self.chosen_probs(beta, grad=True)
        pf = np.maximum(p, PROB_FLOOR)
        dlogV = np.where((p > PROB_FLOOR)[:, None], dV / pf[:, None], 0.0)
        rows = dlogV[:, self.free_rows]
        S = (rows[:, :, None] * self.z[:, None, :]).reshape(self.n, -1)
        return float(np.log(pf).sum()), S.sum(axis=0), S

    def loglik(self, theta) -> float:
        p = self.chosen_probs(self.beta_from(theta))
        return float(np.log(np.maximum(p, PROB_FLOOR)).sum())


def problem_from_data(data, outcomes, params: ChoiceParams, stream=None) -> ChoiceProblem:
    return ChoiceProblem(data.z, _as_vl(outcomes), data.choice, params.kernel, params.ghk,
                         params.a, params.base, stream)


def choice_loglik(params: ChoiceParams, data, outcomes, stream: RngStream | None = None) -> float:
    """Sum over individuals of the log probability of the observed choice.

    Probabilities are floored at 1e-12 before the log.
    """
    problem = problem_from_data(data, outcomes, params, stream)
    return problem.loglik(params.free_vector())


def numerical_gradient(fun, theta, rel_step=1e-5):
    """Central differences with step ``rel_step * (1 + |theta_k|)``."""
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for k in range(theta.size):
        h = rel_step * (1.0 + abs(theta[k]))
        up = theta.copy()
        dn = theta.copy()
        up[k] += h
        dn[k] -= h
        g[k] = (fun(up) - fun(dn)) / (2.0 * h)
    return g


@dataclass
class ChoiceFit:
    params: ChoiceParams
    loglik: float
    gradient_norm: float
    iterations: int
    converged: bool
    seed_record: RngStream
    n_obs: int = 0
    scores: np.ndarray | None = field(default=None, repr=False)
    message: str = ""

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "loglik": float(self.loglik),
            "gradient_norm": float(self.gradient_norm),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "seed_record": self.seed_record.to_dict(),
            "n_obs": int(self.n_obs),
            "message": self.message,
        }


def relative_gradient_norm(loglik, grad) -> float:
    return float(np.max(np.abs(grad), initial=0.0) / max(1.0, abs(loglik)))


def check_choice_cells(data_z, chosen, J, z_names=()):
    """Raise for never-chosen alternatives; warn on empty binary-covariate cells."""
    counts = np.bincount(chosen, minlength=J)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DegenerateChoiceError(
            f"alternative(s) {empty.tolist()} never chosen; their coefficients are not identified"
        )
    z = np.asarray(data_z, dtype=float)
    for k in range(z.shape[1]):
        col = z[:, k]
        levels = np.unique(col)
        if levels.size != 2 or not set(levels.tolist()) <= {0.0, 1.0}:
            continue
        name = z_names[k] if k < len(z_names) else f"z{k}"
        for level in (0.0, 1.0):
            sub = np.bincount(chosen[col == level], minlength=J)
            missing = np.flatnonzero(sub == 0)
            if missing.size:
                warnings.warn(
                    f"covariate {name!r} = {level:g} never co-occurs with alternative(s) "
                    f"{missing.tolist()}: choice separated, estimates may diverge",
                    SeparationWarning,
                    stacklevel=3,
                )


def _inverse_opg(S, scale):
    w, Q = np.linalg.eigh(S.T @ S / scale)
    w = np.maximum(w, 1e-8 * max(w.max(initial=0.0), 1e-300))
    H = (Q / w) @ Q.T
    return 0.5 * (H + H.T)


def maximize(fun_grad_scores, theta0, tol=1e-5, max_iter=500, restarts=3):
    """Maximize a log-likelihood with BFGS seeded by the inverse OPG matrix.

    ``fun_grad_scores(theta)`` returns ``(loglik, gradient, per_row_scores)``.
    Convergence means ``max|g| / max(1, |loglik|) < tol``.

    Returns ``(theta, loglik, grad, scores, iterations, converged, message)``.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    ll, g, S = fun_grad_scores(theta)
    iterations = 0
    message = "converged at start"
    for _ in range(restarts + 1):
        if relative_gradient_norm(ll, g) < tol or iterations >= max_iter:
            break
        scale = max(1.0, abs(ll))
        h0 = _inverse_opg(S, scale)
        cache = {}

        def fg(t):
            key = t.tobytes()
            if key not in cache:
                cache.clear()
                cache[key] = fun_grad_scores(t)
            v, gr, _ = cache[key]
            if not np.isfinite(v):
                return np.inf, np.zeros_like(t)
            return -v / scale, -gr / scale

        res = optimize.minimize(
            fg, theta, jac=True, method="BFGS",
            options={"gtol": 0.2 * tol, "maxiter": max_iter - iterations, "hess_inv0": h0,
                     "norm": np.inf},
        )
        iterations += int(res.nit)
        message = str(res.message)
        if np.all(np.isfinite(res.x)):
            new = fun_grad_scores(res.x)
            if new[0] >= ll - 1e-12 * max(1.0, abs(ll)):
                theta = res.x
                ll, g, S = new
        if res.nit == 0:
            break
    converged = relative_gradient_norm(ll, g) < tol
    return theta, ll, g, S, iterations, converged, message


def fit_choice(data, outcomes, kernel: str = "probit", init: ChoiceParams | None = None,
               base: int | None = None, ghk: GhkConfig | None = None, a: float = 0.0,
               tol: float = 1e-5, max_iter: int = 500, stream: RngStream | None = None) -> ChoiceFit:
    """Maximum (simulated) likelihood for the choice coefficients.

    Without ``init`` a probit fit starts from the logit estimates. The simulated
    log-likelihood is maximized with exact gradients of the simulator under
    common random numbers.

    Raises
    ------
    DegenerateChoiceError
        If some alternative is never chosen.
    """
    J = data.n_alternatives
    chosen = data.choice
    check_choice_cells(data.z, chosen, J, data.schema.z)
    if init is not None:
        kernel = init.kernel
        base = init.base
        ghk = init.ghk
        a = init.a
    ghk = ghk if ghk is not None else GhkConfig()
    base = J - 1 if base is None else base
    if init is None:
        init = ChoiceParams.zeros(J, data.z.shape[1], base, kernel=kernel, ghk=ghk, a=a,
                                  z_names=data.schema.z)
        if kernel == "probit":
            seed_fit = fit_choice(data, outcomes, "logit", base=base, tol=tol, max_iter=max_iter)
            init = replace(seed_fit.params, kernel="probit", ghk=ghk, a=a)
    problem = problem_from_data(data, outcomes, init, stream)
    theta, ll, g, S, iters, converged, msg = maximize(
        problem.scores, init.free_vector(), tol=tol, max_iter=max_iter
    )
    params = replace(init.with_free(theta), z_names=tuple(data.schema.z))
    return ChoiceFit(params, ll, relative_gradient_norm(ll, g), iters, converged,
                     problem.stream, data.n, S, msg)
