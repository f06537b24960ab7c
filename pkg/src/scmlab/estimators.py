"""Counterfactual estimators sharing one fit container.

Covers the data-driven weight fit with and without an intercept, the two
uniform-weight baselines, single-best-control selection, and the two
propensity-score methods. Every fit reports weights, an intercept (zero
when the method has none), the pretreatment loss, and per-period effect
estimates.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .panel import PanelData, PredictorMatrix, build_predictors
from .qp import (ConstraintSet, NumericalError, WeightVector,
                 solve_constrained_ls, solve_constrained_ls_intercept)

__all__ = [
    "Method",
    "EstimatorFit",
    "PropensityModel",
    "DEFAULT_RIDGE",
    "fit_scm",
    "fit_dsc",
    "fit_did",
    "fit_equal",
    "fit_best_select",
    "fit_propensity",
    "fit_psm",
    "fit_ipw",
]

DEFAULT_RIDGE = 1e-3
PROPENSITY_CLIP = 1e-6


class Method(enum.Enum):
    SCM = "scm"
    DSC = "dsc"
    DID = "did"
    EQUAL = "equal"
    SEL = "sel"
    PSM = "psm"
    IPW = "ipw"


@dataclass(frozen=True)
class EstimatorFit:
    """One method's weights, counterfactual path, and effect estimates."""

    method: Method
    weights: WeightVector
    intercept: float
    pre_loss: float
    counterfactual: np.ndarray
    effects: np.ndarray
    converged: bool = True

    def __post_init__(self) -> None:
        counterfactual = np.array(self.counterfactual, dtype=float)
        effects = np.array(self.effects, dtype=float)
        counterfactual.setflags(write=False)
        effects.setflags(write=False)
        object.__setattr__(self, "counterfactual", counterfactual)
        object.__setattr__(self, "effects", effects)


@dataclass(frozen=True)
class PropensityModel:
    """Ridge-penalized logistic model of the treatment indicator.

    ``coefficients`` holds the intercept first, then one slope per
    predictor row; only the slopes are penalized.
    """

    coefficients: np.ndarray
    ridge_lambda: float
    converged: bool

    def __post_init__(self) -> None:
        coefficients = np.array(self.coefficients, dtype=float)
        if not np.all(np.isfinite(coefficients)):
            raise ValueError("coefficients must be finite")
        coefficients.setflags(write=False)
        object.__setattr__(self, "coefficients", coefficients)

    def scores(self, panel: PanelData) -> np.ndarray:
        """Fitted treatment probabilities, treated unit first."""
        design = _unit_design(build_predictors(panel))
        return _sigmoid(design @ self.coefficients)


def _finish_fit(method: Method, panel: PanelData, weights: np.ndarray,
                intercept: float, converged: bool = True) -> EstimatorFit:
    """Assemble the fit container from weights and an intercept."""
    w = WeightVector(weights)
    pred = build_predictors(panel)
    residual = pred.target - pred.controls @ w.values - intercept
    pre_loss = float(residual @ residual) / panel.t0
    counterfactual = panel.post_outcomes[1:].T @ w.values + intercept
    effects = panel.post_outcomes[0] - counterfactual
    return EstimatorFit(method=method, weights=w, intercept=float(intercept),
                        pre_loss=pre_loss, counterfactual=counterfactual,
                        effects=effects, converged=converged)


def fit_scm(panel: PanelData, cset: ConstraintSet) -> EstimatorFit:
    """Weights minimizing the pretreatment mismatch over the weight set."""
    report = solve_constrained_ls(build_predictors(panel), cset)
    return _finish_fit(Method.SCM, panel, report.weights.values, 0.0,
                       converged=report.converged)


def fit_dsc(panel: PanelData, cset: ConstraintSet) -> EstimatorFit:
    """Demeaned variant: weights plus a bounded intercept, fit jointly."""
    report = solve_constrained_ls_intercept(build_predictors(panel), cset)
    return _finish_fit(Method.DSC, panel, report.weights.values,
                       report.intercept, converged=report.converged)


def fit_did(panel: PanelData) -> EstimatorFit:
    """Equal weights plus the pretreatment level gap as intercept."""
    j = panel.n_controls
    weights = np.full(j, 1.0 / j)
    intercept = float(np.mean(panel.pre_outcomes[0]) - np.mean(panel.pre_outcomes[1:]))
    return _finish_fit(Method.DID, panel, weights, intercept)


def fit_equal(panel: PanelData) -> EstimatorFit:
    """Plain average of the controls, no intercept."""
    j = panel.n_controls
    return _finish_fit(Method.EQUAL, panel, np.full(j, 1.0 / j), 0.0)


def fit_best_select(panel: PanelData) -> EstimatorFit:
    """All weight on the control with the smallest pretreatment gap.

    Ties go to the lowest control index.
    """
    gaps = panel.pre_outcomes[1:] - panel.pre_outcomes[0]
    objectives = np.mean(gaps * gaps, axis=1)
    weights = np.zeros(panel.n_controls)
    weights[int(np.argmin(objectives))] = 1.0
    return _finish_fit(Method.SEL, panel, weights, 0.0)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _unit_design(pred: PredictorMatrix) -> np.ndarray:
    """One row per unit: an intercept column then the unit's predictors."""
    rows = np.vstack([pred.target, pred.controls.T])
    return np.column_stack([np.ones(rows.shape[0]), rows])


def _penalized_loglik(design: np.ndarray, labels: np.ndarray,
                      beta: np.ndarray, lam: float) -> float:
    z = design @ beta
    ll = float(np.sum(labels * z - np.logaddexp(0.0, z)))
    return ll - 0.5 * lam * float(beta[1:] @ beta[1:])


def fit_propensity(panel: PanelData,
                   ridge_lambda: float = DEFAULT_RIDGE) -> PropensityModel:
    """Fit the treatment indicator on unit predictors by penalized logistic.

    One treated observation among J+1 with more regressors than units is
    separable, so the slope penalty is what pins the fit down. Newton with
    step halving does the work; if the Hessian degenerates the fit falls
    back to fixed-step gradient ascent. The convergence flag reports
    whether the penalized score actually vanished.
    """
    if ridge_lambda <= 0.0:
        raise ValueError("ridge_lambda must be positive")
    design = _unit_design(build_predictors(panel))
    labels = np.zeros(design.shape[0])
    labels[0] = 1.0
    penalty = np.ones(design.shape[1])
    penalty[0] = 0.0
    beta = np.zeros(design.shape[1])

    def gradient(b: np.ndarray) -> np.ndarray:
        probs = _sigmoid(design @ b)
        return design.T @ (labels - probs) - ridge_lambda * penalty * b

    hessian_failed = False
    for _ in range(100):
        grad = gradient(beta)
        if float(np.max(np.abs(grad))) <= 1e-8:
            break
        probs = _sigmoid(design @ beta)
        weights = probs * (1.0 - probs)
        hessian = design.T @ (weights[:, None] * design)
        hessian[np.diag_indices_from(hessian)] += ridge_lambda * penalty
        try:
            direction = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            direction = None
        if direction is None or not np.all(np.isfinite(direction)):
            hessian_failed = True
            break
        current = _penalized_loglik(design, labels, beta, ridge_lambda)
        scale = 1.0
        for _ in range(30):
            candidate = beta + scale * direction
            if _penalized_loglik(design, labels, candidate, ridge_lambda) >= current:
                break
            scale *= 0.5
        else:
            break
        beta = beta + scale * direction
    if hessian_failed:
        # Lipschitz constant of the penalized score
        lip = 0.25 * float(np.sum(design * design)) + ridge_lambda
        for _ in range(5000):
            grad = gradient(beta)
            if float(np.max(np.abs(grad))) <= 1e-8:
                break
            beta = beta + grad / lip
    converged = float(np.max(np.abs(gradient(beta)))) <= 1e-8
    return PropensityModel(coefficients=beta, ridge_lambda=ridge_lambda,
                           converged=converged)


def fit_psm(panel: PanelData, k: int = 1,
            ridge_lambda: float = DEFAULT_RIDGE,
            model: PropensityModel | None = None) -> EstimatorFit:
    """Equal weight on the k controls nearest in propensity score.

    Ties go to the lowest control index. A prefit propensity model may be
    passed in to share work across methods.
    """
    if not 1 <= k <= panel.n_controls:
        raise ValueError(f"k must be between 1 and {panel.n_controls}")
    model = model or fit_propensity(panel, ridge_lambda)
    scores = model.scores(panel)
    distance = np.abs(scores[1:] - scores[0])
    chosen = np.argsort(distance, kind="stable")[:k]
    weights = np.zeros(panel.n_controls)
    weights[chosen] = 1.0 / k
    return _finish_fit(Method.PSM, panel, weights, 0.0,
                       converged=model.converged)


def fit_ipw(panel: PanelData, ridge_lambda: float = DEFAULT_RIDGE,
            model: PropensityModel | None = None) -> EstimatorFit:
    """Weights proportional to each control's propensity odds.

    Scores are clamped away from 0 and 1 before forming odds so the ratio
    stays finite.
    """
    model = model or fit_propensity(panel, ridge_lambda)
    scores = model.scores(panel)[1:]
    scores = np.clip(scores, PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)
    odds = scores / (1.0 - scores)
    total = float(odds.sum())
    if not math.isfinite(total) or total <= 0.0:
        raise NumericalError("propensity odds sum to zero; cannot normalize")
    return _finish_fit(Method.IPW, panel, odds / total, 0.0,
                       converged=model.converged)
