"""Exact risk evaluation and optimal weights under a known Gaussian law.

Risk here means the expected mean squared gap between the treated unit's
untreated outcome and its synthetic counterpart over a horizon. Because
the outcome law is Gaussian with known per-period mean and covariance, the
expectation reduces to a quadratic form evaluated exactly; minimizing it
over the weight set reuses the quadratic solver.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .dgp import GaussianOutcomeLaw
from .qp import ConstraintSet, SolveReport, WeightVector, _solve_quadratic

if TYPE_CHECKING:
    from .estimators import EstimatorFit
    from .panel import PanelData

__all__ = [
    "LawUnavailable",
    "Horizon",
    "RiskValue",
    "RiskDecomposition",
    "risk",
    "risk_with_intercept",
    "optimal_weight",
    "loss_post",
    "pretreatment_fit_floor",
    "risk_decompose",
    "kkt_closed_form_residual",
    "equality_multiplier",
    "dilution_diagnostic",
]


class LawUnavailable(RuntimeError):
    """Raised when an operation needs an outcome law that was not provided."""


class Horizon(enum.Enum):
    PRE = "pre"
    POST = "post"


@dataclass(frozen=True)
class RiskValue:
    """A nonnegative expected mean squared gap."""

    value: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.value) or self.value < 0.0:
            raise ValueError(f"risk must be finite and nonnegative, got {self.value!r}")

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class RiskDecomposition:
    """Risk split into factor, covariate, and idiosyncratic parts."""

    factor_term: float
    covariate_term: float
    idiosyncratic_term: float

    @property
    def total(self) -> float:
        return self.factor_term + self.covariate_term + self.idiosyncratic_term


def _require_law(law: GaussianOutcomeLaw | None) -> GaussianOutcomeLaw:
    if law is None:
        raise LawUnavailable(
            "this operation needs the Gaussian outcome law; the panel's "
            "generator did not provide one")
    return law


def _horizon_rows(law: GaussianOutcomeLaw, horizon: Horizon) -> np.ndarray:
    return law.pre_rows if horizon is Horizon.PRE else law.post_rows


def _gap_vector(w: WeightVector, law: GaussianOutcomeLaw) -> np.ndarray:
    if w.values.size != law.n_units - 1:
        raise ValueError("weight length must match the law's control count")
    return np.concatenate([[1.0], -w.values])


def _risk_parts(w: WeightVector, law: GaussianOutcomeLaw, horizon: Horizon,
                d: float = 0.0) -> tuple[float, float]:
    """(mean-gap part, noise part) of the risk at (w, d)."""
    a = _gap_vector(w, law)
    gaps = _horizon_rows(law, horizon) @ a - d
    mean_part = float(gaps @ gaps) / gaps.size
    noise_part = max(float(a @ law.sigma @ a), 0.0)
    return mean_part, noise_part


def risk(w: WeightVector, law: GaussianOutcomeLaw | None,
         horizon: Horizon = Horizon.POST) -> RiskValue:
    """Exact expected mean squared gap of the synthetic unit at weights w.

    Averages the squared mean gap over the horizon's periods and adds the
    noise variance of the gap, which the law makes available in closed form.
    """
    law = _require_law(law)
    mean_part, noise_part = _risk_parts(w, law, horizon)
    return RiskValue(mean_part + noise_part)


def risk_with_intercept(w: WeightVector, d: float,
                        law: GaussianOutcomeLaw | None,
                        horizon: Horizon = Horizon.POST) -> RiskValue:
    """Exact risk when the synthetic unit carries an intercept d."""
    law = _require_law(law)
    mean_part, noise_part = _risk_parts(w, law, horizon, d=float(d))
    return RiskValue(mean_part + noise_part)


def optimal_weight(law: GaussianOutcomeLaw | None, cset: ConstraintSet,
                   with_intercept: bool = False,
                   horizon: Horizon = Horizon.POST) -> SolveReport:
    """Risk minimizer over the weight set, optionally with an intercept.

    Builds the quadratic form the risk induces in (w, d) and hands it to
    the constrained quadratic solver.
    """
    law = _require_law(law)
    n_controls = law.n_units - 1
    cset.require_feasible(n_controls)
    rows = _horizon_rows(law, horizon)
    n_rows = rows.shape[0]
    u0, uc = rows[:, 0], rows[:, 1:]
    P = uc.T @ uc / n_rows + law.sigma[1:, 1:]
    q = uc.T @ u0 / n_rows + law.sigma[1:, 0]
    dbox = None
    if with_intercept:
        if cset.intercept_domain is None:
            raise ValueError("with_intercept requires an intercept domain")
        dbox = cset.intercept_domain
        col = uc.sum(axis=0) / n_rows
        P = np.block([[P, col[:, None]], [col[None, :], np.array([[1.0]])]])
        q = np.append(q, float(u0.sum()) / n_rows)
    lo, hi = cset.bounds
    z, iterations, converged, kkt = _solve_quadratic(P, q, lo, hi, dbox=dbox)
    if with_intercept:
        weights, d = WeightVector(z[:-1]), float(z[-1])
        objective = risk_with_intercept(weights, d, law, horizon).value
    else:
        weights, d = WeightVector(z), None
        objective = risk(weights, law, horizon).value
    weights.require_within(cset)
    return SolveReport(weights=weights, intercept=d, objective=objective,
                       kkt_residual=kkt, iterations=iterations,
                       converged=converged)


def pretreatment_fit_floor(law: GaussianOutcomeLaw | None, cset: ConstraintSet,
                           horizon: Horizon = Horizon.PRE) -> RiskValue:
    """Infimum of the horizon's risk over the weight set."""
    return RiskValue(optimal_weight(law, cset, horizon=horizon).objective)


def loss_post(fit: "EstimatorFit", truth: "PanelData") -> float:
    """Mean squared gap between the untreated path and the counterfactual.

    In simulations no effect is ever injected, so the observed post series
    is the untreated truth.
    """
    actual = truth.outcomes[0, truth.t0 :]
    if actual.size != fit.counterfactual.size:
        raise ValueError("fit and panel disagree on the post horizon length")
    gaps = actual - fit.counterfactual
    return float(gaps @ gaps) / gaps.size


def risk_decompose(w: WeightVector, law: GaussianOutcomeLaw | None,
                   horizon: Horizon = Horizon.POST) -> RiskDecomposition:
    """Split the risk into systematic and noise parts.

    The factor term is the average squared mean gap, which under the factor
    model equals the loading mismatch projected on the realized factors;
    the idiosyncratic term is the gap's noise variance. With no covariates
    in the law the covariate term is zero.
    """
    law = _require_law(law)
    mean_part, noise_part = _risk_parts(w, law, horizon)
    return RiskDecomposition(factor_term=mean_part, covariate_term=0.0,
                             idiosyncratic_term=noise_part)


def _simplified_risk_gradient(control_loadings: np.ndarray,
                              factor_gram: np.ndarray,
                              treated_loadings: np.ndarray,
                              noise_variance: float,
                              w: np.ndarray) -> np.ndarray:
    """Half-gradient of the homoskedastic-noise risk at w."""
    m, gram = np.asarray(control_loadings, float), np.asarray(factor_gram, float)
    mu0 = np.asarray(treated_loadings, float)
    return m.T @ (gram @ (m @ w - mu0)) + noise_variance * w


def kkt_closed_form_residual(control_loadings: np.ndarray,
                             factor_gram: np.ndarray,
                             treated_loadings: np.ndarray,
                             noise_variance: float,
                             w: WeightVector,
                             multipliers: tuple[np.ndarray, float]) -> float:
    """Max-norm residual of the analytic first-order system at (w, multipliers).

    For independent homoskedastic noise the risk minimizer solves
    (M'QM + s I) w = M'Q mu0 + rho1/2 - rho2/2 * ones, with M the control
    loadings, Q the factor second-moment matrix over the horizon, mu0 the
    treated loadings, and s the noise variance. Returns the max-norm gap of
    that system at the supplied point.
    """
    rho1, rho2 = multipliers
    rho1 = np.asarray(rho1, dtype=float)
    lhs = _simplified_risk_gradient(control_loadings, factor_gram,
                                    treated_loadings, noise_variance, w.values)
    lhs = lhs - 0.5 * rho1 + 0.5 * rho2
    return float(np.max(np.abs(lhs)))


def equality_multiplier(control_loadings: np.ndarray,
                        factor_gram: np.ndarray,
                        treated_loadings: np.ndarray,
                        noise_variance: float,
                        w: WeightVector,
                        cset: ConstraintSet) -> float:
    """Sum-constraint multiplier read from the solver's fixed point.

    At an optimum the risk gradient is constant on coordinates strictly
    inside the box, and that constant is the negated multiplier; averaging
    over interior coordinates recovers it.
    """
    lo, hi = cset.bounds
    tol = 1e-7 * max(1.0, abs(lo), abs(hi))
    interior = (w.values > lo + tol) & (w.values < hi - tol)
    if not interior.any():
        raise ValueError("no interior coordinates to read the multiplier from")
    grad = 2.0 * _simplified_risk_gradient(control_loadings, factor_gram,
                                           treated_loadings, noise_variance,
                                           w.values)
    return -float(np.mean(grad[interior]))


def dilution_diagnostic(control_loadings: np.ndarray,
                        factor_gram: np.ndarray) -> tuple[float, float, float, float]:
    """Extremal eigenvalues governing how thinly optimal weights spread.

    Returns (min, max) eigenvalues of the control-averaged loading second
    moment M M'/J followed by those of the factor second-moment matrix.
    Bounded spectra on both keep optimal weights diluting as the donor pool
    grows.
    """
    m = np.asarray(control_loadings, dtype=float)
    gram = np.asarray(factor_gram, dtype=float)
    loading_eigs = np.linalg.eigvalsh(m @ m.T / m.shape[1])
    factor_eigs = np.linalg.eigvalsh(gram)
    return (float(loading_eigs[0]), float(loading_eigs[-1]),
            float(factor_eigs[0]), float(factor_eigs[-1]))
