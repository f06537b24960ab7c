"""Synthetic-control estimation with an exact risk oracle.

The package fits synthetic-control weights and a family of competitor
estimators on treated/control panels, evaluates their exact Gaussian risk
under a linear factor-model data generator, and drives the Monte Carlo
experiments that check weight convergence and asymptotic optimality.
"""

__version__ = "0.1.0"

from .dgp import (CHI_SQUARE_SIGMAS, FactorModelGenerator, FactorModelSpec,
                  GaussianOutcomeLaw, PanelGenerator, build_error_cov,
                  draw_sigmas, simulate)
from .estimators import (DEFAULT_RIDGE, EstimatorFit, Method, PropensityModel,
                         fit_best_select, fit_did, fit_dsc, fit_equal,
                         fit_ipw, fit_propensity, fit_psm, fit_scm)
from .experiments import (ConfigError, ExperimentResult, MonteCarloConfig,
                          ResultRow, derive_seed, emit_report, load_config,
                          load_experiment_csv, parse_config, run_convergence,
                          run_optimality)
from .oracle import (Horizon, LawUnavailable, RiskDecomposition, RiskValue,
                     dilution_diagnostic, equality_multiplier,
                     kkt_closed_form_residual, loss_post, optimal_weight,
                     pretreatment_fit_floor, risk, risk_decompose,
                     risk_with_intercept)
from .panel import (ColumnSpec, PanelData, PanelFormatError, PredictorMatrix,
                    build_predictors, load_panel_csv, write_panel_csv)
from .qp import (ConstraintSet, InfeasibleConstraintsError, NumericalError,
                 SolveReport, WeightVector, kkt_residual, project_simplex_box,
                 solve_constrained_ls, solve_constrained_ls_intercept)

__all__ = [
    "__version__",
    "CHI_SQUARE_SIGMAS", "FactorModelGenerator", "FactorModelSpec",
    "GaussianOutcomeLaw", "PanelGenerator", "build_error_cov", "draw_sigmas",
    "simulate",
    "DEFAULT_RIDGE", "EstimatorFit", "Method", "PropensityModel",
    "fit_best_select", "fit_did", "fit_dsc", "fit_equal", "fit_ipw",
    "fit_propensity", "fit_psm", "fit_scm",
    "ConfigError", "ExperimentResult", "MonteCarloConfig", "ResultRow",
    "derive_seed", "emit_report", "load_config", "load_experiment_csv",
    "parse_config", "run_convergence", "run_optimality",
    "Horizon", "LawUnavailable", "RiskDecomposition", "RiskValue",
    "dilution_diagnostic", "equality_multiplier", "kkt_closed_form_residual",
    "loss_post", "optimal_weight", "pretreatment_fit_floor", "risk",
    "risk_decompose", "risk_with_intercept",
    "ColumnSpec", "PanelData", "PanelFormatError", "PredictorMatrix",
    "build_predictors", "load_panel_csv", "write_panel_csv",
    "ConstraintSet", "InfeasibleConstraintsError", "NumericalError",
    "SolveReport", "WeightVector", "kkt_residual", "project_simplex_box",
    "solve_constrained_ls", "solve_constrained_ls_intercept",
]
