"""First-stage labor-market regressions and counterfactual hourly earnings.

Both regressions share the layout ``[student characteristics | alternative
dummies | extra exogenous variables]``. No intercept is added: the full set of
alternative dummies plays that role.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePredictionError, ShapeError, SingularDesignError

# relative singular-value threshold for declaring a design rank deficient
RANK_RTOL = 1e-10


@dataclass
class FirstStageModel:
    """Fitted linear model ``z delta + sum_j d_j kappa_j + z_tilde lambda``."""

    delta: np.ndarray
    kappa: np.ndarray
    lam: np.ndarray
    residual_variance: float
    condition_number: float = float("nan")
    n_obs: int = 0
    column_names: list = field(default_factory=list)

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate([self.delta, self.kappa, self.lam])

    def predict(self, z, alternative, z_extra):
        """Predictions with every row's alternative dummy set to ``alternative``."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        z_extra = np.atleast_2d(np.asarray(z_extra, dtype=float))
        return z @ self.delta + self.kappa[alternative] + z_extra @ self.lam

    def to_dict(self):
        return {
            "delta": self.delta.tolist(),
            "kappa": self.kappa.tolist(),
            "lambda": self.lam.tolist(),
            "residual_variance": float(self.residual_variance),
            "condition_number": float(self.condition_number),
            "n_obs": int(self.n_obs),
            "columns": list(self.column_names),
        }


def _collinear_columns(design, names):
    _, s, vt = np.linalg.svd(design, full_matrices=False)
    null = vt[s <= RANK_RTOL * s[0]]
    involved = np.flatnonzero(np.any(np.abs(null) > 1e-8, axis=0))
    return [names[i] for i in involved]


def fit_ols(design, response, names=None):
    """Least squares through a QR factorization.

    Returns
    -------
    coef : ndarray
    residual_variance : float
        ``SSR / (n - k)`` (zero when the fit is exact).
    condition_number : float
        Ratio of extreme singular values of ``design``.

    Raises
    ------
    SingularDesignError
        If ``design`` has fewer rows than columns or is rank deficient; the error
        lists the columns involved in the collinearity.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ShapeError(f"design {X.shape} and response {y.shape} do not conform")
    n, k = X.shape
    names = list(names) if names is not None else [f"col{i}" for i in range(k)]
    if n < k:
        raise SingularDesignError(f"{n} rows cannot identify {k} coefficients", names)
    s = np.linalg.svd(X, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= RANK_RTOL * s[0]:
        cols = _collinear_columns(X, names)
        raise SingularDesignError(f"design is rank deficient; collinear columns: {cols}", cols)
    Q, Rm = np.linalg.qr(X)
    coef = np.linalg.solve(Rm, Q.T @ y)
    resid = y - X @ coef
    dof = max(n - k, 1)
    return coef, float(resid @ resid / dof), float(s[0] / s[-1])


def first_stage_design(z, choice, z_extra, n_alternatives):
    """Stack ``[z | alternative dummies | z_extra]``."""
    z = np.asarray(z, dtype=float).reshape(len(choice), -1)
    z_extra = np.asarray(z_extra, dtype=float).reshape(len(choice), -1)
    dummies = np.zeros((len(choice), n_alternatives))
    dummies[np.arange(len(choice)), np.asarray(choice, dtype=int)] = 1.0
    return np.hstack([z, dummies, z_extra])


def fit_first_stage(z, choice, z_extra, response, n_alternatives, names=None) -> FirstStageModel:
    """Fit one labor-market regression on the chosen-alternative dummies."""
    X = first_stage_design(z, choice, z_extra, n_alternatives)
    kz = X.shape[1] - n_alternatives - np.asarray(z_extra).reshape(len(choice), -1).shape[1]
    if names is None:
        names = (
            [f"z{i}" for i in range(kz)]
            + [f"alt{j}" for j in range(n_alternatives)]
            + [f"extra{i}" for i in range(X.shape[1] - kz - n_alternatives)]
        )
    coef, s2, cond = fit_ols(X, response, names)
    return FirstStageModel(
        delta=coef[:kz],
        kappa=coef[kz:kz + n_alternatives],
        lam=coef[kz + n_alternatives:],
        residual_variance=s2,
        condition_number=cond,
        n_obs=len(response),
        column_names=list(names),
    )


@dataclass
class ExpectedLaborOutcomes:
    """Counterfactual earnings, hours and their ratio for every alternative (N x J)."""

    expected_earnings: np.ndarray
    expected_hours: np.ndarray

    @property
    def normalized_wage(self) -> np.ndarray:
        return self.expected_earnings / self.expected_hours


def predict_counterfactuals(model_w: FirstStageModel, model_h: FirstStageModel,
                            z, z_extra_w, z_extra_h) -> ExpectedLaborOutcomes:
    """Predict earnings and hours for every individual under every alternative.

    ``z`` holds the first-stage student characteristics; the extra exogenous
    variables are held at each individual's observed values.

    Raises
    ------
    DegeneratePredictionError
        If any predicted hours are not strictly positive.
    """
    J = model_w.kappa.size
    z = np.atleast_2d(np.asarray(z, dtype=float))
    n = z.shape[0]
    ew = np.column_stack([model_w.predict(z, j, np.reshape(z_extra_w, (n, -1))) for j in range(J)])
    eh = np.column_stack([model_h.predict(z, j, np.reshape(z_extra_h, (n, -1))) for j in range(J)])
    bad = np.flatnonzero(np.any(~(eh > 0.0), axis=1))
    if bad.size:
        shown = bad[:10].tolist()
        raise DegeneratePredictionError(
            f"predicted hours not positive for {bad.size} individual(s), rows {shown}", bad
        )
    return ExpectedLaborOutcomes(ew, eh)
