"""Joint estimation of a polychotomous choice and a binary outcome linked by a
Gaussian copula, with a Wald test for selection on unobservables."""

from .choice_model import ChoiceFit, ChoiceParams, choice_loglik, fit_choice
from .data_io import (
    Dataset,
    DgpConfig,
    Schema,
    TruthRecord,
    default_dgp,
    empirical_moments,
    load_dataset,
    save_dataset,
    simulate_dgp,
)
from .errors import (
    ChoiceCopulaError, DomainError, ShapeError, DecompositionError, SingularDesignError,
    DegeneratePredictionError, DegenerateChoiceError, SpecificationError,
    ConditioningError, InternalConsistencyError, DataError, SchemaError, DataParseError,
    DataRangeError, ConfigError, SeparationWarning, ReliabilityWarning,
)
from .first_stage import (
    ExpectedLaborOutcomes,
    FirstStageModel,
    fit_first_stage,
    predict_counterfactuals,
)
from .ghk import GhkConfig, UtilitySpec, ghk_rectangle_prob, mnl_choice_prob, mnp_choice_prob
from .inference import AmeReport, BootstrapResult, ame_choice, ame_outcome, bootstrap_pipeline
from .covariance import opg_covariance
from .joint_model import (
    FitResult,
    JointParams,
    QuadratureRule,
    fit_joint,
    joint_loglik,
    prob_married_and_major,
    prob_unmarried_and_major,
    rho_transform,
    rho_transform_inverse,
)
from .pipeline import PipelineConfig, PipelineResult, run_pipeline
from .stats_core import (
    RngStream,
    bivariate_normal_cdf,
    cholesky,
    std_normal_cdf,
    std_normal_quantile,
    truncated_normal_draw,
)
from .unobs_test import (
    LatentCovSpec,
    TestReport,
    distribution_free_check,
    implied_copula_correlations,
    implied_xi_covariance,
    second_place_probs,
    theorem1_covariance,
    wald_rho_test,
)

__version__ = "0.1.0"

__all__ = [
    "AmeReport",
    "BootstrapResult",
    "ChoiceCopulaError",
    "ChoiceFit",
    "ChoiceParams",
    "ConditioningError",
    "ConfigError",
    "DataError",
    "DataParseError",
    "DataRangeError",
    "Dataset",
    "DecompositionError",
    "DegenerateChoiceError",
    "DegeneratePredictionError",
    "DgpConfig",
    "DomainError",
    "ExpectedLaborOutcomes",
    "FirstStageModel",
    "FitResult",
    "GhkConfig",
    "InternalConsistencyError",
    "JointParams",
    "LatentCovSpec",
    "PipelineConfig",
    "PipelineResult",
    "QuadratureRule",
    "ReliabilityWarning",
    "RngStream",
    "Schema",
    "SchemaError",
    "SeparationWarning",
    "ShapeError",
    "SingularDesignError",
    "SpecificationError",
    "TestReport",
    "TruthRecord",
    "UtilitySpec",
    "ame_choice",
    "ame_outcome",
    "bivariate_normal_cdf",
    "bootstrap_pipeline",
    "choice_loglik",
    "cholesky",
    "default_dgp",
    "distribution_free_check",
    "empirical_moments",
    "fit_choice",
    "fit_first_stage",
    "fit_joint",
    "ghk_rectangle_prob",
    "implied_copula_correlations",
    "implied_xi_covariance",
    "joint_loglik",
    "load_dataset",
    "mnl_choice_prob",
    "mnp_choice_prob",
    "opg_covariance",
    "predict_counterfactuals",
    "prob_married_and_major",
    "prob_unmarried_and_major",
    "rho_transform",
    "rho_transform_inverse",
    "run_pipeline",
    "save_dataset",
    "second_place_probs",
    "simulate_dgp",
    "std_normal_cdf",
    "std_normal_quantile",
    "theorem1_covariance",
    "truncated_normal_draw",
    "wald_rho_test",
]
