"""End-to-end estimation: earnings and hours regressions, choice model, joint model."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .choice_model import ChoiceFit, fit_choice
from .errors import ConfigError, SchemaError
from .first_stage import ExpectedLaborOutcomes, FirstStageModel, fit_first_stage, predict_counterfactuals
from .ghk import GhkConfig
from .joint_model import FitResult, QuadratureRule, fit_joint


@dataclass(frozen=True)
class PipelineConfig:
    """Estimation settings shared by every stage."""

    kernel: str = "probit"
    base: int | None = None
    a: float = 0.0
    num_draws: int = 250
    antithetic: bool = True
    seed: int = 0
    quad_order: int = 40
    mode: str = "two_step"
    tol: float = 1e-5
    max_iter: int = 500

    def __post_init__(self):
        if self.kernel not in ("probit", "logit"):
            raise ConfigError(f"kernel must be probit or logit, got {self.kernel!r}")
        if self.mode not in ("two_step", "full"):
            raise ConfigError(f"mode must be two_step or full, got {self.mode!r}")
        if not self.tol > 0.0:
            raise ConfigError("tol must be positive")
        if int(self.max_iter) < 1 or int(self.num_draws) < 1 or int(self.quad_order) < 2:
            raise ConfigError("max_iter, num_draws and quad_order must be positive")

    @property
    def ghk(self) -> GhkConfig:
        return GhkConfig(int(self.num_draws), bool(self.antithetic), int(self.seed))

    @property
    def rule(self) -> QuadratureRule:
        return QuadratureRule.gauss_legendre(int(self.quad_order))

    @classmethod
    def from_dict(cls, d) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown estimation keys: {sorted(unknown)}")
        casts = {"num_draws": int, "quad_order": int, "max_iter": int, "seed": int,
                 "a": float, "tol": float}
        d = dict(d)
        try:
            for key, cast in casts.items():
                if key in d:
                    d[key] = cast(d[key])
            if d.get("base") is not None:
                d["base"] = int(d["base"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid estimation setting: {exc}") from exc
        if "antithetic" in d and not isinstance(d["antithetic"], bool):
            raise ConfigError("antithetic must be true or false")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class PipelineResult:
    earnings_model: FirstStageModel
    hours_model: FirstStageModel
    outcomes: ExpectedLaborOutcomes
    choice_fit: ChoiceFit
    joint_fit: FitResult

    @property
    def converged(self) -> bool:
        return bool(self.choice_fit.converged and self.joint_fit.converged)

    def estimate_names(self) -> list:
        return self.choice_fit.params.free_names() + list(self.joint_fit.names)

    def estimates(self) -> np.ndarray:
        """Choice coefficients followed by the joint-model estimates (correlation scale)."""
        return np.concatenate([self.choice_fit.params.free_vector(), self.joint_fit.estimates])

    def to_dict(self):
        return {
            "first_stage": {
                "earnings": self.earnings_model.to_dict(),
                "hours": self.hours_model.to_dict(),
            },
            "choice": self.choice_fit.to_dict(),
            "joint": self.joint_fit.to_dict(),
            "converged": self.converged,
        }


def first_stage(data):
    """Fit earnings and hours regressions and predict for every alternative."""
    s = data.schema
    if not s.has_first_stage:
        raise SchemaError("schema must name the earnings and hours columns")
    J = data.n_alternatives
    zf = data.matrix(s.first_stage)
    ew = data.matrix(s.earnings_extra)
    eh = data.matrix(s.hours_extra)
    names_w = list(s.first_stage) + [f"alt{j}" for j in range(J)] + list(s.earnings_extra)
    names_h = list(s.first_stage) + [f"alt{j}" for j in range(J)] + list(s.hours_extra)
    model_w = fit_first_stage(zf, data.choice, ew, data.matrix([s.earnings])[:, 0], J, names_w)
    model_h = fit_first_stage(zf, data.choice, eh, data.matrix([s.hours])[:, 0], J, names_h)
    return model_w, model_h, predict_counterfactuals(model_w, model_h, zf, ew, eh)


def run_pipeline(data, cfg: PipelineConfig = PipelineConfig(), init: PipelineResult | None = None
                 ) -> PipelineResult:
    """Run all estimation stages; ``init`` warm-starts both optimizers."""
    model_w, model_h, outcomes = first_stage(data)
    choice_init = init.choice_fit.params if init is not None else None
    choice = fit_choice(data, outcomes, kernel=cfg.kernel, init=choice_init, base=cfg.base,
                        ghk=cfg.ghk, a=cfg.a, tol=cfg.tol, max_iter=cfg.max_iter)
    joint_init = init.joint_fit.params if init is not None else None
    joint = fit_joint(data, choice.params, outcomes, mode=cfg.mode, init=joint_init,
                      rule=cfg.rule, tol=cfg.tol, max_iter=cfg.max_iter)
    return PipelineResult(model_w, model_h, outcomes, choice, joint)
