"""Standard errors and average marginal effects.

Bootstrap replicates resample individuals with replacement and rerun the whole
pipeline, so the uncertainty from the earnings/hours predictions and from the
choice step is carried into every downstream estimate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .choice_model import ChoiceFit, ChoiceProblem, _as_vl
from .covariance import OpgCovariance, opg_covariance
from .errors import ChoiceCopulaError, DomainError, ReliabilityWarning
from .joint_model import DEFAULT_RULE, FitResult, conditional_outcome_probs
from .pipeline import PipelineConfig, PipelineResult, run_pipeline
from .stats_core import RngStream

__all__ = [
    "AmeReport",
    "BootstrapResult",
    "OpgCovariance",
    "ame_choice",
    "ame_outcome",
    "bootstrap_pipeline",
    "opg_covariance",
]

FAILURE_SHARE_LIMIT = 0.2
BOOTSTRAP_STREAM_ID = 7
FD_REL_STEP = 1e-4

AME_OUTCOME_NOTE = (
    "Alternative effects: average over all individuals of P(m=1 | I=j) - P(m=1 | I=base), "
    "both conditional on the choice and accounting for the copula correlation. "
    "Covariate effects: average derivative of P(m=1 | I=observed choice) by central differences; "
    "binary covariates use the change from 0 to 1."
)
AME_CHOICE_NOTE = (
    "Average derivatives of choice probabilities by central differences. "
    "earnings_effects[k, j] is the effect of alternative k's expected hourly earnings on "
    "the probability of alternative j, holding the other alternatives' earnings fixed."
)


@dataclass
class BootstrapResult:
    replicates: int
    estimates: np.ndarray
    se: np.ndarray
    percentile_ci: np.ndarray
    failures: int
    seed: RngStream
    names: list = field(default_factory=list)
    reliability_warning: bool = False
    ame: dict | None = None

    @property
    def successes(self) -> int:
        return self.replicates - self.failures

    def to_dict(self):
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in np.ravel(a)]

        out = {
            "replicates": int(self.replicates),
            "failures": int(self.failures),
            "successes": int(self.successes),
            "names": list(self.names),
            "se": clean(self.se),
            "ci_lower": clean(self.percentile_ci[:, 0]),
            "ci_upper": clean(self.percentile_ci[:, 1]),
            "estimates": [clean(row) for row in self.estimates],
            "seed": self.seed.to_dict(),
            "reliability_warning": bool(self.reliability_warning),
        }
        if self.ame is not None:
            out["ame"] = self.ame
        return out


def _replicate(data, cfg, stream, init, with_ame):
    idx = stream.generator().integers(0, data.n, data.n)
    sample = data.take(idx)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = run_pipeline(sample, cfg, init=init)
    except (ChoiceCopulaError, np.linalg.LinAlgError, FloatingPointError, ValueError):
        return None, None
    if not res.converged:
        return None, None
    extra = None
    if with_ame:
        out = ame_outcome(res.joint_fit, sample, res.outcomes)
        ch = ame_choice(res.choice_fit, sample, res.outcomes)
        extra = np.concatenate([out.effects, ch.effects.ravel(), ch.earnings_effects.ravel()])
    return res.estimates(), extra


def bootstrap_pipeline(data, config: PipelineConfig, B: int, seed: int, n_jobs: int = 1,
                       init: PipelineResult | None = None, with_ame: bool = False
                       ) -> BootstrapResult:
    """Nonparametric bootstrap of the full pipeline.

    Replicate ``r`` draws its rows from the sub-stream ``RngStream(seed, 7).child(r)``,
    so each replicate is unaffected by the others and by ``n_jobs``. Replicates that
    raise or fail to converge are dropped and counted. ``init`` (typically the
    full-sample fit) warm-starts every replicate; without it a full-sample fit is
    run first for that purpose and to fix the parameter layout.
    """
    if B < 2:
        raise DomainError("the bootstrap needs at least two replicates")
    root = RngStream(seed, BOOTSTRAP_STREAM_ID)
    if init is None:
        init = run_pipeline(data, config)
    names = init.estimate_names()
    P = len(names)
    jobs = (delayed(_replicate)(data, config, root.child(r), init, with_ame) for r in range(B))
    results = Parallel(n_jobs=n_jobs, backend="loky" if n_jobs != 1 else "sequential")(jobs)
    est = np.full((B, P), np.nan)
    ame_rows = []
    failures = 0
    for r, (theta, extra) in enumerate(results):
        if theta is None:
            failures += 1
            continue
        est[r] = theta
        if extra is not None:
            ame_rows.append(extra)
    ok = est[np.all(np.isfinite(est), axis=1)]
    if ok.shape[0] >= 2:
        se = ok.std(axis=0, ddof=1)
        ci = np.column_stack([np.percentile(ok, 2.5, axis=0), np.percentile(ok, 97.5, axis=0)])
    else:
        se = np.full(P, np.nan)
        ci = np.full((P, 2), np.nan)
    flag = failures > FAILURE_SHARE_LIMIT * B
    if flag:
        warnings.warn(
            f"{failures} of {B} bootstrap replicates failed; standard errors are unreliable",
            ReliabilityWarning,
            stacklevel=2,
        )
    ame = None
    if with_ame and len(ame_rows) >= 2:
        ame = {"se": np.asarray(ame_rows).std(axis=0, ddof=1).tolist()}
    return BootstrapResult(B, est, se, ci, failures, root, names, flag, ame)


@dataclass
class AmeReport:
    target: str
    names: list
    effects: np.ndarray
    se: np.ndarray
    note: str = ""
    earnings_effects: np.ndarray | None = None
    alternatives: list = field(default_factory=list)

    def to_dict(self):
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in np.ravel(a)]

        out = {
            "target": self.target,
            "names": list(self.names),
            "effects": np.asarray(self.effects).tolist(),
            "se": clean(self.se),
            "note": self.note,
        }
        if self.earnings_effects is not None:
            out["earnings_effects"] = np.asarray(self.earnings_effects).tolist()
            out["alternatives"] = list(self.alternatives)
        return out


def _is_binary(col):
    vals = np.unique(col)
    return vals.size == 2 and set(vals.tolist()) == {0.0, 1.0}


def _step(col):
    sd = float(np.std(col))
    return FD_REL_STEP * (sd if sd > 0.0 else 1.0)


def _choice_problem(params, data, vl):
    return ChoiceProblem(data.z, vl, data.choice, params.kernel, params.ghk, params.a, params.base)


def ame_outcome(fit: FitResult, data, outcomes, rule=DEFAULT_RULE) -> AmeReport:
    """Average marginal effects on the probability of ``m = 1``.

    Effects are reported first for every alternative (zero at the base) and then
    for every non-constant outcome covariate.
    """
    params = fit.params
    cparams = params.beta_ref
    if cparams is None:
        raise DomainError("fit carries no choice parameters")
    vl = _as_vl(outcomes)
    problem = _choice_problem(cparams, data, vl)
    x = data.x
    chosen = data.choice
    n = data.n
    J = data.n_alternatives
    base = cparams.base
    F2 = problem.all_probs(cparams.beta)
    cond = conditional_outcome_probs(params, x, F2, rule)
    effects = [float(np.mean(cond[:, j] - cond[:, base])) for j in range(J)]
    names = [f"alternative[{j}]" for j in range(J)]

    z_names = list(data.schema.z)
    rows = np.arange(n)
    for k, name in enumerate(data.schema.x):
        col = x[:, k]
        if data.is_constant(name):
            continue
        binary = _is_binary(col)
        h = 0.5 if binary else _step(col)
        centre = 0.5 if binary else col

        def prob_at(value):
            xs = x.copy()
            xs[:, k] = value
            if name in z_names:
                zs = data.z.copy()
                zs[:, z_names.index(name)] = value
                F2s = problem.all_probs(cparams.beta, z=zs)
            else:
                F2s = F2
            return conditional_outcome_probs(params, xs, F2s, rule)[rows, chosen]

        diff = (prob_at(centre + h) - prob_at(centre - h)) / (2.0 * h)
        effects.append(float(np.mean(diff)))
        names.append(name)
    effects = np.asarray(effects)
    return AmeReport("outcome", names, effects, np.full(effects.size, np.nan), AME_OUTCOME_NOTE)


def ame_choice(fit: ChoiceFit, data, outcomes) -> AmeReport:
    """Average marginal effects on the choice probabilities.

    ``effects[k, j]`` is the average derivative of P(I = j) with respect to the
    k-th non-constant choice covariate. Probit probabilities are renormalized to
    sum to one across alternatives so that each row of effects sums to zero.
    """
    params = fit.params
    vl = _as_vl(outcomes)
    problem = _choice_problem(params, data, vl)
    z = data.z
    J = data.n_alternatives

    def probs(zs=None, vls=None):
        return problem.all_probs(params.beta, z=zs, vl=vls, normalize=True)

    names = []
    effects = []
    for k, name in enumerate(data.schema.z):
        if data.is_constant(name):
            continue
        h = _step(z[:, k])
        up = z.copy()
        dn = z.copy()
        up[:, k] += h
        dn[:, k] -= h
        effects.append(((probs(zs=up) - probs(zs=dn)) / (2.0 * h)).mean(axis=0))
        names.append(name)
    earnings = np.empty((J, J))
    for k in range(J):
        h = _step(vl[:, k])
        up = vl.copy()
        dn = vl.copy()
        up[:, k] += h
        dn[:, k] -= h
        earnings[k] = ((probs(vls=up) - probs(vls=dn)) / (2.0 * h)).mean(axis=0)
    effects = np.asarray(effects).reshape(len(names), J)
    return AmeReport("choice", names, effects, np.full(effects.shape, np.nan), AME_CHOICE_NOTE,
                     earnings, [f"alternative[{j}]" for j in range(J)])
