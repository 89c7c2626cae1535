"""Contextual top-m ranking and selection with top-two posterior sampling.

The package splits into five layers: problem instances and allocation
bookkeeping (``instances``), posterior models (``posteriors``), large-
deviations rate functions and the static allocation solvers (``allocation``),
sequential sampling policies (``policies``), and the seeded macro-replication
harness with its CSV export (``harness``). ``cli`` wires them into the
``cttts`` command.
"""

from .allocation import (
    HARMONIC,
    KNOWN_VAR,
    MIN_RATE,
    RATE_FAMILIES,
    UNKNOWN_VAR,
    WEIBULL_CENSORED,
    AllocationVector,
    ContextRates,
    RatePair,
    active_class_balance_check,
    alpha_star,
    balance_residual_topm,
    context_rates_from_instance,
    empirical_rate_trajectory,
    kkt_residual_best,
    natural_id_key,
    optimize_gamma,
    rate_gaussian_known_var,
    rate_generic,
    solve_balance_best,
    solve_best_fixed_gamma,
    solve_topm_allocation,
)
from .harness import (
    CSV_HEADER,
    DEFAULT_INIT_PER_DESIGN,
    ExperimentConfig,
    MetricsCurve,
    PolicySpec,
    ReplicationRecord,
    experiment_config_from_dict,
    export_csv,
    run_experiment,
    run_replication,
    write_metadata,
)
from .instances import (
    GAUSSIAN,
    WEIBULL,
    AllocationHistory,
    Observation,
    ProblemInstance,
    generate_gaussian_instance,
    generate_weibull_instance,
    instance_from_dict,
    instance_from_json,
    instance_to_dict,
    instance_to_json,
    load_instance,
    save_instance,
    simulate,
    top_m_indices,
    true_top_m,
)
from .policies import (
    DEFAULT_RESAMPLE_CAP,
    DEFAULT_TUNE_SCHEDULE,
    POLICY_KINDS,
    PolicyState,
    StepDecision,
    analytic_policy_prob,
    aoamc_step,
    boldmc_step,
    ea_step,
    gamma_tune,
    make_policy_state,
    select_final,
    tttsc_step,
)
from .posteriors import (
    DEFAULT_NG_PRIOR,
    GaussianPosteriorSet,
    GridPosterior,
    GridSpec,
    NormalGammaState,
    ParameterDraw,
    WeibullGridPosteriorSet,
    grid_log_increment,
    grid_mean_params,
    grid_sample,
    grid_update,
    kl_gaussian,
    kl_weibull_censored,
    ng_from_stats,
    ng_posterior,
    ng_sample,
    ng_update,
    posterior_set_for,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # instances
    "GAUSSIAN",
    "WEIBULL",
    "ProblemInstance",
    "Observation",
    "AllocationHistory",
    "top_m_indices",
    "true_top_m",
    "simulate",
    "generate_gaussian_instance",
    "generate_weibull_instance",
    "instance_to_dict",
    "instance_from_dict",
    "instance_to_json",
    "instance_from_json",
    "save_instance",
    "load_instance",
    # posteriors
    "DEFAULT_NG_PRIOR",
    "NormalGammaState",
    "ParameterDraw",
    "GridSpec",
    "GridPosterior",
    "GaussianPosteriorSet",
    "WeibullGridPosteriorSet",
    "ng_from_stats",
    "ng_update",
    "ng_posterior",
    "ng_sample",
    "grid_log_increment",
    "grid_update",
    "grid_sample",
    "grid_mean_params",
    "kl_gaussian",
    "kl_weibull_censored",
    "posterior_set_for",
    # allocation
    "KNOWN_VAR",
    "UNKNOWN_VAR",
    "WEIBULL_CENSORED",
    "HARMONIC",
    "MIN_RATE",
    "RATE_FAMILIES",
    "RatePair",
    "ContextRates",
    "AllocationVector",
    "natural_id_key",
    "rate_gaussian_known_var",
    "rate_generic",
    "context_rates_from_instance",
    "solve_balance_best",
    "alpha_star",
    "solve_best_fixed_gamma",
    "optimize_gamma",
    "solve_topm_allocation",
    "kkt_residual_best",
    "balance_residual_topm",
    "active_class_balance_check",
    "empirical_rate_trajectory",
    # policies
    "POLICY_KINDS",
    "DEFAULT_TUNE_SCHEDULE",
    "DEFAULT_RESAMPLE_CAP",
    "PolicyState",
    "StepDecision",
    "make_policy_state",
    "tttsc_step",
    "gamma_tune",
    "ea_step",
    "boldmc_step",
    "aoamc_step",
    "select_final",
    "analytic_policy_prob",
    # harness
    "DEFAULT_INIT_PER_DESIGN",
    "CSV_HEADER",
    "PolicySpec",
    "ExperimentConfig",
    "ReplicationRecord",
    "MetricsCurve",
    "run_replication",
    "run_experiment",
    "export_csv",
    "write_metadata",
    "experiment_config_from_dict",
]
