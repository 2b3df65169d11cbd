"""Burden-aware message-nudging bandit and its simulation test bed.

The package has three layers:

* user environments: zero-inflated Poisson brushing models fit from
  session data (or generated synthetically), with imputed treatment
  effects and weekly habituation dynamics;
* the learning algorithm: an action-centered Bayesian linear regression
  bandit with closed-form weekly posterior updates and clipped
  posterior-probability action selection;
* the harness: full simulated studies with incremental recruitment, and
  Monte Carlo grid sweeps over the burden-cost weights with CSV and SVG
  reporting.
"""

from .bandit import (
    DecisionRecord,
    PosteriorState,
    PriorSpec,
    clip,
    joint_feature,
    posterior_update,
    prob_positive_advantage,
    select_action,
)
from .environment import (
    HabituationState,
    PopulationEffectStats,
    UserEnvModel,
    attach_effect_sizes,
    habituation_step,
    impute_effect_sizes,
    load_models,
    make_synthetic_pool,
    population_effect_stats,
    sample_quality,
    save_models,
)
from .features import (
    CostParams,
    NormalizationSpec,
    UserHistory,
    alg_advantage_features,
    alg_baseline_features,
    brushing_quality,
    cost_term,
    discount_weight_constant,
    env_baseline_features,
    env_treatment_features,
    exp_avg,
    surrogate_reward,
)
from .fitting import (
    FitConfig,
    SessionRecord,
    fit_all_users,
    fit_user_model,
    fit_zip_map,
    load_sessions,
    zip_log_posterior,
    zip_log_posterior_grad,
)
from .study import (
    StudyConfig,
    StudyResult,
    mean_cumulative_quality,
    percentile25_cumulative_quality,
    run_study,
)
from .sweep import SweepConfig, SweepResult, emit_heatmap, run_sweep

__version__ = "0.1.0"

__all__ = [
    "CostParams",
    "DecisionRecord",
    "FitConfig",
    "HabituationState",
    "NormalizationSpec",
    "PopulationEffectStats",
    "PosteriorState",
    "PriorSpec",
    "SessionRecord",
    "StudyConfig",
    "StudyResult",
    "SweepConfig",
    "SweepResult",
    "UserEnvModel",
    "UserHistory",
    "alg_advantage_features",
    "alg_baseline_features",
    "attach_effect_sizes",
    "brushing_quality",
    "clip",
    "cost_term",
    "discount_weight_constant",
    "emit_heatmap",
    "env_baseline_features",
    "env_treatment_features",
    "exp_avg",
    "fit_all_users",
    "fit_user_model",
    "fit_zip_map",
    "habituation_step",
    "impute_effect_sizes",
    "joint_feature",
    "load_models",
    "load_sessions",
    "make_synthetic_pool",
    "mean_cumulative_quality",
    "percentile25_cumulative_quality",
    "population_effect_stats",
    "posterior_update",
    "prob_positive_advantage",
    "run_study",
    "run_sweep",
    "sample_quality",
    "save_models",
    "select_action",
    "surrogate_reward",
    "zip_log_posterior",
    "zip_log_posterior_grad",
]
