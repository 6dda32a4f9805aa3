"""Hidden Markov models for longitudinal ordinal data with a dynamic
response-style regime: estimation, standard errors, diagnostics, simulation."""

from .diagnostics import IndexReport, ResidualTable, fit_indices, residuals, s_indices
from .em import FitConfig, FitResult, count_params, em_step, fit, fit_null
from .hmm import (
    ForwardBackwardResult,
    LatentPosteriors,
    forward_backward,
    full_conditional_pmf,
    full_conditional_pmfs,
    posteriors,
)
from .latent import (
    LatentParams,
    bivariate_kernel,
    initial_probs_L,
    initial_probs_U,
    transition_probs_L,
    transition_probs_U,
)
from .logit import LogitFit, WeightedLogitProblem, fit_stereotype, fit_weighted_logit
from .modelspec import ModelSpec
from .observation import (
    ModeClass,
    ObservationParams,
    awr_logits,
    awr_pmf,
    emission_vector,
    rs_mode_class,
    rs_pmf,
    score_function,
)
from .panel import (
    CategoryOutOfRange,
    CovariateConfigIndex,
    MissingCell,
    NonIntegerCategory,
    PanelDataset,
    PanelError,
    PanelSchema,
    RaggedCovariates,
    index_configurations,
    load_panel,
    write_panel,
)
from .params import ParamSet, canonicalize
from .simulate import CovariateDesign, SimConfig, parametric_bootstrap_panel, shiw_design, simulate
from .stderrors import ScoreSet, SEResult, stderr, unit_scores

__version__ = "0.1.0"

__all__ = [
    "CategoryOutOfRange",
    "CovariateConfigIndex",
    "CovariateDesign",
    "FitConfig",
    "FitResult",
    "ForwardBackwardResult",
    "IndexReport",
    "LatentParams",
    "LatentPosteriors",
    "LogitFit",
    "MissingCell",
    "ModeClass",
    "ModelSpec",
    "NonIntegerCategory",
    "ObservationParams",
    "PanelDataset",
    "PanelError",
    "PanelSchema",
    "ParamSet",
    "RaggedCovariates",
    "ResidualTable",
    "SEResult",
    "ScoreSet",
    "SimConfig",
    "WeightedLogitProblem",
    "awr_logits",
    "awr_pmf",
    "bivariate_kernel",
    "canonicalize",
    "count_params",
    "em_step",
    "emission_vector",
    "fit",
    "fit_indices",
    "fit_null",
    "fit_stereotype",
    "fit_weighted_logit",
    "forward_backward",
    "full_conditional_pmf",
    "full_conditional_pmfs",
    "index_configurations",
    "initial_probs_L",
    "initial_probs_U",
    "load_panel",
    "parametric_bootstrap_panel",
    "posteriors",
    "residuals",
    "rs_mode_class",
    "rs_pmf",
    "s_indices",
    "score_function",
    "shiw_design",
    "simulate",
    "stderr",
    "transition_probs_L",
    "transition_probs_U",
    "unit_scores",
    "write_panel",
]
