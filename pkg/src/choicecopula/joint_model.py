"""Gaussian-copula joint likelihood of the binary outcome and the chosen alternative.

With ``c = -(x gamma + tau_j)`` and ``q = Phi^-1(F2)``, where ``F2`` is the
probability of the chosen alternative ``j``,

    P(m = 0, I = j) = B(c, q; rho_j) = int_{-inf}^{c} phi(e) Phi((q - rho_j e) / sqrt(1 - rho_j^2)) de
    P(m = 1, I = j) = F2 - P(m = 0, I = j)

The integral is evaluated by Gauss-Legendre quadrature on ``[-8, c]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .choice_model import (
    PROB_FLOOR,
    ChoiceParams,
    ChoiceProblem,
    _as_vl,
    maximize,
    relative_gradient_norm,
)
from .covariance import opg_covariance
from .errors import DomainError, InternalConsistencyError, ShapeError, SpecificationError
from .stats_core import RngStream, bivariate_normal_pdf, gauss_legendre, std_normal_cdf

QUAD_LOWER = -8.0
# half-width, in conditional standard deviations, of the panel around the CDF transition
_TRANSITION = 8.0
F2_CEIL = 1.0 - 1e-12
# keeps |rho| < 1 in floating point when the raw parameter runs off to infinity
RHO_BOUND = 1.0 - 1e-12


def rho_transform(raw):
    """Map an unconstrained real to a correlation: ``2 / (1 + e^raw) - 1``.

    Odd and strictly decreasing; equals ``-tanh(raw / 2)`` clipped to
    ``[-RHO_BOUND, RHO_BOUND]`` so that huge raw values never give exactly 1.
    """
    out = np.clip(-np.tanh(0.5 * np.asarray(raw, dtype=float)), -RHO_BOUND, RHO_BOUND)
    return float(out) if np.ndim(raw) == 0 else out


def rho_transform_inverse(rho):
    rho = np.asarray(rho, dtype=float)
    if not np.all(np.abs(rho) < 1.0):
        raise DomainError("correlation must lie in (-1, 1)")
    out = -2.0 * np.arctanh(rho)
    return float(out) if out.ndim == 0 else out


def rho_transform_derivative(raw):
    rho = -np.tanh(0.5 * np.asarray(raw, dtype=float))
    return -0.5 * (1.0 - rho * rho)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on [-1, 1], mapped affinely onto each interval."""

    nodes: np.ndarray
    weights: np.ndarray
    lower: float = QUAD_LOWER

    @classmethod
    def gauss_legendre(cls, order: int = 40, lower: float = QUAD_LOWER) -> "QuadratureRule":
        x, w = gauss_legendre(order)
        return cls(x, w, lower)

    @property
    def order(self) -> int:
        return self.nodes.size

    def integrate(self, f, a, b):
        """``int_a^b f`` for broadcastable interval arrays; ``f`` is vectorized."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        pts = mid[..., None] + half[..., None] * self.nodes
        return half * (f(pts) @ self.weights)


DEFAULT_RULE = QuadratureRule.gauss_legendre()


def unmarried_prob_quadrature(c, q, rho, rule: QuadratureRule = DEFAULT_RULE):
    """Vectorized ``B(c, q; rho)`` by quadrature over the outcome error.

    The interval is cut into three panels so that the zone where the conditional
    normal CDF moves between 0 and 1 gets its own panel; this keeps the rule
    accurate for strong correlations.
    """
    c, q, rho = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (c, q, rho)))
    if not np.all(np.abs(rho) < 1.0):
        raise DomainError("correlation must lie in (-1, 1)")
    lo = rule.lower
    hi = np.maximum(c, lo)
    s = np.sqrt(1.0 - rho * rho)
    arho = np.abs(rho)
    # below this the transition zone covers the whole interval anyway
    steep = arho > 1e-8
    safe = np.where(steep, rho, 1.0)
    centre = np.where(steep, q / safe, 0.0)
    width = np.where(steep, _TRANSITION * s / np.abs(safe), np.inf)
    a = np.clip(centre - width, lo, hi)
    b = np.clip(centre + width, lo, hi)

    def integrand(e):
        return np.exp(-0.5 * e * e) / np.sqrt(2.0 * np.pi) * special.ndtr(
            (q[..., None] - rho[..., None] * e) / s[..., None]
        )

    return (rule.integrate(integrand, lo, a) + rule.integrate(integrand, a, b)
            + rule.integrate(integrand, b, hi))


def _bvn_partials(c, q, rho):
    s = np.sqrt(1.0 - rho * rho)
    phi_c = np.exp(-0.5 * c * c) / np.sqrt(2.0 * np.pi)
    phi_q = np.exp(-0.5 * q * q) / np.sqrt(2.0 * np.pi)
    dc = phi_c * special.ndtr((q - rho * c) / s)
    dq = phi_q * special.ndtr((c - rho * q) / s)
    drho = bivariate_normal_pdf(c, q, rho)
    return dc, dq, drho, phi_q


@dataclass
class JointParams:
    """Outcome coefficients, alternative effects and raw correlations.

    ``beta_ref`` carries the choice parameters; ``estimate_beta`` records whether
    they are re-estimated jointly (full mode) or held at the first-step values.
    """

    gamma: np.ndarray
    tau: np.ndarray
    rho_raw: np.ndarray
    beta_ref: ChoiceParams | None = None
    estimate_beta: bool = False

    def __post_init__(self):
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        self.tau = np.atleast_1d(np.asarray(self.tau, dtype=float))
        self.rho_raw = np.atleast_1d(np.asarray(self.rho_raw, dtype=float))
        if self.tau.size != self.rho_raw.size:
            raise ShapeError("tau and rho_raw need one entry per alternative")

    @property
    def rho(self) -> np.ndarray:
        return rho_transform(self.rho_raw)

    @classmethod
    def from_rho(cls, gamma, tau, rho, **kwargs) -> "JointParams":
        return cls(gamma, tau, rho_transform_inverse(np.asarray(rho, dtype=float)), **kwargs)

    def vector(self) -> np.ndarray:
        parts = [self.gamma, self.tau, self.rho_raw]
        if self.estimate_beta:
            parts.append(self.beta_ref.free_vector())
        return np.concatenate(parts)

    def with_vector(self, theta) -> "JointParams":
        kx, J = self.gamma.size, self.tau.size
        theta = np.asarray(theta, dtype=float)
        beta_ref = self.beta_ref
        if self.estimate_beta:
            beta_ref = beta_ref.with_free(theta[kx + 2 * J:])
        return replace(self, gamma=theta[:kx], tau=theta[kx:kx + J],
                       rho_raw=theta[kx + J:kx + 2 * J], beta_ref=beta_ref)

    def to_dict(self):
        return {
            "gamma": self.gamma.tolist(),
            "tau": self.tau.tolist(),
            "rho_raw": self.rho_raw.tolist(),
            "rho": np.atleast_1d(self.rho).tolist(),
            "estimate_beta": bool(self.estimate_beta),
            "beta_ref": None if self.beta_ref is None else self.beta_ref.to_dict(),
        }


def _index(params: JointParams, x_row, chosen):
    x_row = np.asarray(x_row, dtype=float)
    return -(x_row @ params.gamma + params.tau[chosen])


def _check_f2(F2_value):
    F2 = np.asarray(F2_value, dtype=float)
    if not np.all((F2 > 0.0) & (F2 < 1.0)):
        raise DomainError("F2 must lie strictly between 0 and 1")
    return F2


def prob_unmarried_and_major(params: JointParams, x_row, chosen, F2_value,
                             rule: QuadratureRule = DEFAULT_RULE):
    """P(m = 0, I = chosen) for one individual (or broadcast arrays of them).

    The quadrature value is clamped to ``[0, min(Phi(c), F2)]``.
    """
    F2 = _check_f2(F2_value)
    c = _index(params, x_row, chosen)
    rho = rho_transform(params.rho_raw[chosen])
    val = unmarried_prob_quadrature(c, special.ndtri(F2), rho, rule)
    out = np.clip(val, 0.0, np.minimum(std_normal_cdf(c), F2))
    return float(out) if np.ndim(out) == 0 else out


def prob_married_and_major(params: JointParams, x_row, chosen, F2_value,
                           rule: QuadratureRule = DEFAULT_RULE):
    """P(m = 1, I = chosen) as ``F2 - P(m = 0, I = chosen)``.

    Raises
    ------
    InternalConsistencyError
        If the difference is negative beyond 1e-12.
    """
    F2 = _check_f2(F2_value)
    out = F2 - prob_unmarried_and_major(params, x_row, chosen, F2_value, rule)
    if np.any(out < -1e-12):
        raise InternalConsistencyError("P(m=1, I=j) is negative")
    out = np.maximum(out, 0.0)
    return float(out) if np.ndim(out) == 0 else out


class JointProblem:
    """Joint log-likelihood with analytic scores.

    In two-step mode ``F2`` is data. In full mode the choice coefficients are
    appended to the parameter vector and ``F2`` is recomputed from ``choice``.
    """

    def __init__(self, x, chosen, m, J, F2=None, choice: ChoiceProblem | None = None,
                 rule: QuadratureRule = DEFAULT_RULE):
        self.x = np.asarray(x, dtype=float)
        self.chosen = np.asarray(chosen, dtype=int)
        self.m = np.asarray(m, dtype=float)
        self.J = int(J)
        self.rule = rule
        self.choice = choice
        self.full = F2 is None
        if self.full and choice is None:
            raise DomainError("full mode requires a choice problem")
        self.F2 = None if self.full else np.clip(np.asarray(F2, dtype=float), PROB_FLOOR, F2_CEIL)
        self.kx = self.x.shape[1]
        n = self.x.shape[0]
        if self.chosen.shape != (n,) or self.m.shape != (n,):
            raise ShapeError("x, chosen and m must have the same number of rows")
        self.onehot = np.zeros((n, self.J))
        self.onehot[np.arange(n), self.chosen] = 1.0

    def split(self, theta):
        kx, J = self.kx, self.J
        return theta[:kx], theta[kx:kx + J], theta[kx + J:kx + 2 * J], theta[kx + 2 * J:]

    def _terms(self, theta, grad):
        gamma, tau, raw, beta_free = self.split(np.asarray(theta, dtype=float))
        if self.full:
            beta = self.choice.beta_from(beta_free)
            if grad:
                F2raw, dV = self.choice.chosen_probs(beta, grad=True)
            else:
                F2raw = self.choice.chosen_probs(beta)
            F2 = np.clip(F2raw, PROB_FLOOR, F2_CEIL)
        else:
            F2raw = F2 = self.F2
        c = -(self.x @ gamma + tau[self.chosen])
        rho_all = rho_transform(raw)
        rho = rho_all[self.chosen]
        q = special.ndtri(F2)
        P0 = unmarried_prob_quadrature(c, q, rho, self.rule)
        P0 = np.clip(P0, 0.0, np.minimum(std_normal_cdf(c), F2))
        P1 = F2 - P0
        p0f = np.maximum(P0, PROB_FLOOR)
        p1f = np.maximum(P1, PROB_FLOOR)
        ll_rows = (1.0 - self.m) * np.log(p0f) + self.m * np.log(p1f)
        if not grad:
            return ll_rows, None
        dl_dp0 = np.where(P0 > PROB_FLOOR, (1.0 - self.m) / p0f, 0.0) - np.where(
            P1 > PROB_FLOOR, self.m / p1f, 0.0)
        Bc, Bq, Br, phi_q = _bvn_partials(c, q, rho)
        g_c = dl_dp0 * Bc
        blocks = [
            -g_c[:, None] * self.x,
            -g_c[:, None] * self.onehot,
            (dl_dp0 * Br * rho_transform_derivative(raw)[self.chosen])[:, None] * self.onehot,
        ]
        if self.full:
            dl_dF2 = np.where(P1 > PROB_FLOOR, self.m / p1f, 0.0) + dl_dp0 * Bq / phi_q
            dl_dF2 = np.where((F2raw > PROB_FLOOR) & (F2raw < F2_CEIL), dl_dF2, 0.0)
            dV = dl_dF2[:, None] * dV
            rows = dV[:, self.choice.free_rows]
            z = self.choice.z
            blocks.append((rows[:, :, None] * z[:, None, :]).reshape(z.shape[0], -1))
        return ll_rows, np.hstack(blocks)

    def loglik(self, theta) -> float:
        return float(self._terms(theta, False)[0].sum())

    def scores(self, theta):
        ll_rows, S = self._terms(theta, True)
        return float(ll_rows.sum()), S.sum(axis=0), S


def choice_problem_for(data, outcomes, params: ChoiceParams, stream=None) -> ChoiceProblem:
    return ChoiceProblem(data.z, _as_vl(outcomes), data.choice, params.kernel, params.ghk,
                         params.a, params.base, stream)


def chosen_f2(data, outcomes, params: ChoiceParams, stream=None) -> np.ndarray:
    """Model probability of each individual's observed choice."""
    problem = choice_problem_for(data, outcomes, params, stream)
    return problem.chosen_probs(params.beta)


def joint_loglik(params: JointParams, data, F2_cache, rule: QuadratureRule = DEFAULT_RULE) -> float:
    """Joint log-likelihood with the choice probabilities ``F2_cache`` as data."""
    F2 = np.asarray(F2_cache, dtype=float)
    if F2.shape != (data.n,):
        raise ShapeError("F2_cache must hold one probability per row")
    problem = JointProblem(data.x, data.choice, data.outcome, data.n_alternatives, F2=F2, rule=rule)
    return problem.loglik(np.concatenate([params.gamma, params.tau, params.rho_raw]))


def check_exclusions(data) -> None:
    """Require a non-constant choice-only covariate and an outcome-only covariate.

    Raises
    ------
    SpecificationError
    """
    z_only = [c for c in data.z_only if not data.is_constant(c)]
    if not z_only:
        raise SpecificationError(
            "no non-constant choice covariate is excluded from the outcome equation"
        )
    if not data.x_only:
        raise SpecificationError("no outcome covariate is excluded from the choice equation")


def fit_outcome_probit(x, chosen, m, J, tol=1e-8, max_iter=200):
    """Binary probit of ``m`` on ``[x, alternative dummies]`` without intercept.

    Returns ``(gamma, tau, loglik)``.
    """
    problem = JointProblem(x, chosen, m, J, F2=np.full(len(m), 0.5))
    kx = problem.kx
    free = kx + J

    def scores(theta):
        full = np.concatenate([theta, np.zeros(J)])
        ll, g, S = problem.scores(full)
        return ll, g[:free], S[:, :free]

    theta, _, _, _, _, _, _ = maximize(scores, np.zeros(free), tol=tol, max_iter=max_iter)
    c = -(np.asarray(x, float) @ theta[:kx] + theta[kx:][chosen])
    ll = np.where(m > 0, np.log(np.maximum(special.ndtr(-c), PROB_FLOOR)),
                  np.log(np.maximum(special.ndtr(c), PROB_FLOOR))).sum()
    return theta[:kx], theta[kx:], float(ll)


@dataclass
class FitResult:
    """Joint-model estimates with OPG standard errors.

    ``cov_raw`` refers to the optimizer's parameter vector (raw correlations);
    ``rho_cov`` is carried to the correlation scale by the delta method.
    """

    params: JointParams
    loglik: float
    converged: bool
    iterations: int
    gradient_norm: float
    mode: str
    names: list
    cov_raw: np.ndarray
    flagged: bool
    seed_record: RngStream | None = None
    quad_order: int = 40
    message: str = ""
    scores: np.ndarray | None = field(default=None, repr=False)

    @property
    def rho_hat(self) -> np.ndarray:
        return np.atleast_1d(self.params.rho)

    @property
    def _rho_slice(self):
        kx, J = self.params.gamma.size, self.params.tau.size
        return slice(kx + J, kx + 2 * J)

    @property
    def rho_cov(self) -> np.ndarray:
        d = rho_transform_derivative(self.params.rho_raw)
        sl = self._rho_slice
        return d[:, None] * self.cov_raw[sl, sl] * d[None, :]

    @property
    def se_raw(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov_raw), 0.0))

    @property
    def estimates(self) -> np.ndarray:
        """Parameter vector on the reported scale (correlations, not raw)."""
        theta = self.params.vector().copy()
        theta[self._rho_slice] = self.rho_hat
        return theta

    @property
    def se(self) -> np.ndarray:
        se = self.se_raw.copy()
        se[self._rho_slice] = np.sqrt(np.maximum(np.diag(self.rho_cov), 0.0))
        return se

    def to_dict(self):
        return {
            "mode": self.mode,
            "params": self.params.to_dict(),
            "names": list(self.names),
            "estimates": self.estimates.tolist(),
            "se": self.se.tolist(),
            "loglik": float(self.loglik),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "gradient_norm": float(self.gradient_norm),
            "cov_raw": self.cov_raw.tolist(),
            "rho_hat": self.rho_hat.tolist(),
            "rho_cov": self.rho_cov.tolist(),
            "covariance_flagged": bool(self.flagged),
            "quad_order": int(self.quad_order),
            "seed_record": None if self.seed_record is None else self.seed_record.to_dict(),
            "message": self.message,
        }


def fit_joint(data, choice_params: ChoiceParams, outcomes, mode: str = "two_step",
              init: JointParams | None = None, rule: QuadratureRule = DEFAULT_RULE,
              tol: float = 1e-5, max_iter: int = 500, stream: RngStream | None = None) -> FitResult:
    """Maximize the joint log-likelihood.

    ``two_step`` holds the choice coefficients at ``choice_params`` and treats the
    implied probabilities of the observed choices as data; ``full`` re-estimates
    them together with ``gamma``, ``tau`` and the correlations. Without ``init`` the
    outcome coefficients start from a standalone probit and the correlations at 0.

    Raises
    ------
    SpecificationError
        If the exclusion restrictions are not met.
    """
    if mode not in ("two_step", "full"):
        raise DomainError(f"unknown mode {mode!r}")
    check_exclusions(data)
    J = data.n_alternatives
    chosen = data.choice
    m = data.outcome
    x = data.x
    cp = choice_problem_for(data, outcomes, choice_params, stream)
    if init is None:
        gamma0, tau0, _ = fit_outcome_probit(x, chosen, m, J)
        init = JointParams(gamma0, tau0, np.zeros(J))
    full = mode == "full"
    start_beta = init.beta_ref if full and init.beta_ref is not None else choice_params
    init = replace(init, beta_ref=start_beta, estimate_beta=full)
    if full:
        problem = JointProblem(x, chosen, m, J, choice=cp, rule=rule)
    else:
        problem = JointProblem(x, chosen, m, J, F2=cp.chosen_probs(choice_params.beta), rule=rule)
    theta, ll, g, S, iters, converged, msg = maximize(
        problem.scores, init.vector(), tol=tol, max_iter=max_iter
    )
    params = init.with_vector(theta)
    opg = opg_covariance(S)
    names = (
        [f"gamma:{c}" for c in data.schema.x]
        + [f"tau[{j}]" for j in range(J)]
        + [f"rho[{j}]" for j in range(J)]
    )
    if full:
        names += choice_params.free_names()
    return FitResult(params, ll, converged, iters, relative_gradient_norm(ll, g), mode, names,
                     opg.cov, opg.flagged, cp.stream, rule.order, msg, S)


def conditional_outcome_probs(params: JointParams, x, F2_all, rule: QuadratureRule = DEFAULT_RULE):
    """P(m = 1 | I = j) for every row and every alternative ``j`` (N x J).

    ``F2_all[i, j]`` is the model probability that individual ``i`` picks ``j``.
    """
    x = np.asarray(x, dtype=float)
    F2 = np.clip(np.asarray(F2_all, dtype=float), PROB_FLOOR, F2_CEIL)
    c = -(x @ params.gamma)[:, None] - params.tau[None, :]
    rho = np.broadcast_to(np.atleast_1d(params.rho)[None, :], F2.shape)
    P0 = unmarried_prob_quadrature(c, special.ndtri(F2), rho, rule)
    P0 = np.clip(P0, 0.0, np.minimum(std_normal_cdf(c), F2))
    return (F2 - P0) / F2
