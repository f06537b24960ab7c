"""Constrained least squares over box-and-sum weight sets, with certificates.

The weight set is {w in [-c_lower, c_upper]^J : sum w = 1}, optionally
augmented by a bounded intercept coordinate that stays out of the sum
constraint. The solver is accelerated projected gradient descent with exact
Euclidean projection, stopping on a closed-form KKT residual.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .panel import PredictorMatrix

__all__ = [
    "InfeasibleConstraintsError",
    "NumericalError",
    "ConstraintSet",
    "WeightVector",
    "SolveReport",
    "project_simplex_box",
    "solve_constrained_ls",
    "solve_constrained_ls_intercept",
    "kkt_residual",
]

KKT_TOLERANCE = 1e-8
MAX_ITERATIONS = 100_000


class InfeasibleConstraintsError(ValueError):
    """Raised when the requested weight set is empty."""


class NumericalError(RuntimeError):
    """Raised when a computation fails numerically beyond recovery."""


@dataclass(frozen=True)
class ConstraintSet:
    """Bounds of the weight set, plus an optional intercept interval.

    Weights live in [-c_lower, c_upper] and sum to one. The default bounds
    (0, 1) give the classic nonnegative weight set.
    """

    c_lower: float = 0.0
    c_upper: float = 1.0
    intercept_domain: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.c_lower) and math.isfinite(self.c_upper)):
            raise InfeasibleConstraintsError("bounds must be finite")
        if self.c_lower < 0.0 or self.c_upper < 0.0:
            raise InfeasibleConstraintsError("bounds must be nonnegative")
        if self.intercept_domain is not None:
            lo, hi = self.intercept_domain
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise InfeasibleConstraintsError("invalid intercept domain")
            object.__setattr__(self, "intercept_domain", (float(lo), float(hi)))

    @property
    def bounds(self) -> tuple[float, float]:
        # 0.0 - x instead of -x keeps the lower bound at +0.0 when c_lower is 0
        return (0.0 - self.c_lower, self.c_upper)

    def require_feasible(self, n_weights: int) -> None:
        """Check that the box intersects the sum-to-one hyperplane."""
        if n_weights < 1:
            raise InfeasibleConstraintsError("need at least one weight")
        if n_weights * self.c_upper < 1.0 or -n_weights * self.c_lower > 1.0:
            raise InfeasibleConstraintsError(
                f"no feasible weights for {n_weights} units with bounds "
                f"[{-self.c_lower}, {self.c_upper}]")


@dataclass(frozen=True)
class WeightVector:
    """A weight vector summing to one within 1e-10."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("weights must form a nonempty 1-D vector")
        if not np.all(np.isfinite(values)):
            raise ValueError("weights must be finite")
        if abs(float(values.sum()) - 1.0) > 1e-10:
            raise ValueError(f"weights sum to {values.sum()!r}, not 1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    def require_within(self, cset: ConstraintSet) -> None:
        lo, hi = cset.bounds
        if float(self.values.min()) < lo - 1e-10 or float(self.values.max()) > hi + 1e-10:
            raise ValueError("weights violate the box bounds")


@dataclass(frozen=True)
class SolveReport:
    """Solver output: the point reached and the certificate at that point."""

    weights: WeightVector
    intercept: float | None
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool


def _project_box_sum(v: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Exact Euclidean projection onto {w in [lo, hi]^n : sum w = 1}.

    Bisection on the scalar dual of the sum constraint brackets the active
    pattern; the final multiplier is then solved exactly on that pattern.
    """
    tau_lo = float(v.min()) - hi
    tau_hi = float(v.max()) - lo
    w = np.clip(v - 0.5 * (tau_lo + tau_hi), lo, hi)
    for _ in range(4):
        for _ in range(50):
            mid = 0.5 * (tau_lo + tau_hi)
            if float(np.clip(v - mid, lo, hi).sum()) > 1.0:
                tau_lo = mid
            else:
                tau_hi = mid
        tau = 0.5 * (tau_lo + tau_hi)
        w = np.clip(v - tau, lo, hi)
        free = (w > lo) & (w < hi)
        n_free = int(free.sum())
        if n_free:
            n_hi = int((w >= hi).sum())
            n_lo = w.size - n_free - n_hi
            tau = (float(v[free].sum()) + n_hi * hi + n_lo * lo - 1.0) / n_free
            w = np.clip(v - tau, lo, hi)
        gap = float(w.sum()) - 1.0
        if abs(gap) <= 5e-12:
            break
        if gap > 0.0:
            tau_lo = tau
        else:
            tau_hi = tau
    return w


def project_simplex_box(v, cset: ConstraintSet) -> WeightVector:
    """Project a point onto the weight set."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or not np.all(np.isfinite(v)):
        raise ValueError("point to project must be a finite 1-D vector")
    cset.require_feasible(v.size)
    lo, hi = cset.bounds
    return WeightVector(_project_box_sum(v, lo, hi))


def _spectral_bound(mat: np.ndarray) -> float:
    """Largest-eigenvalue estimate by 50 power iterations, fixed start."""
    rng = np.random.default_rng(0x5EED_CAFE)
    v = rng.standard_normal(mat.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(50):
        mv = mat @ v
        nrm = float(np.linalg.norm(mv))
        if nrm == 0.0:
            return 0.0
        v = mv / nrm
        lam = nrm
    return float(v @ (mat @ v)) if math.isfinite(lam) else lam


def _stationarity_residual(g: np.ndarray, z: np.ndarray, lo: float, hi: float,
                           n_weights: int,
                           dbox: tuple[float, float] | None) -> float:
    """Smallest max-norm KKT stationarity violation over all multipliers.

    For the sum multiplier mu, interior and upper-bound coordinates force
    mu >= g_j while interior and lower-bound coordinates force mu <= g_j;
    the best mu splits the worst pair.
    """
    atol = 1e-9 * max(1.0, abs(lo), abs(hi))
    w, gw = z[:n_weights], g[:n_weights]
    at_lo = w <= lo + atol
    at_hi = w >= hi - atol
    interior = ~at_lo & ~at_hi
    needs_ge = interior | (at_hi & ~at_lo)
    needs_le = interior | (at_lo & ~at_hi)
    res = 0.0
    if needs_ge.any() and needs_le.any():
        p = float(gw[needs_ge].max())
        m = float(gw[needs_le].min())
        res = max(0.0, 0.5 * (p - m))
    if dbox is not None:
        d, gd = float(z[n_weights]), float(g[n_weights])
        datol = 1e-9 * max(1.0, abs(dbox[0]), abs(dbox[1]))
        if dbox[1] - dbox[0] <= 2.0 * datol:
            pass
        elif d <= dbox[0] + datol:
            res = max(res, -gd, 0.0)
        elif d >= dbox[1] - datol:
            res = max(res, gd, 0.0)
        else:
            res = max(res, abs(gd))
    return res


def _solve_quadratic(P: np.ndarray, q: np.ndarray, lo: float, hi: float,
                     dbox: tuple[float, float] | None = None,
                     tol: float = KKT_TOLERANCE,
                     max_iter: int = MAX_ITERATIONS):
    """Minimize z'Pz - 2q'z over the weight set (x intercept box).

    Accelerated projected gradient with a gradient-based restart; returns
    (point, iterations, converged, kkt_residual).
    """
    n_total = q.size
    n_weights = n_total - (1 if dbox is not None else 0)
    step = 1.0 / max(2.04 * _spectral_bound(P), 1e-12)

    def project(v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        out[:n_weights] = _project_box_sum(v[:n_weights], lo, hi)
        if dbox is not None:
            out[n_weights] = min(max(v[n_weights], dbox[0]), dbox[1])
        return out

    def kkt_at(point: np.ndarray) -> float:
        grad = 2.0 * (P @ point - q)
        return _stationarity_residual(grad, point, lo, hi, n_weights, dbox)

    start = np.full(n_total, 1.0 / n_weights)
    if dbox is not None:
        start[n_weights] = 0.0
    z = project(start)
    y = z.copy()
    t = 1.0
    iterations = 0
    kkt = math.inf
    converged = False
    for k in range(max_iter):
        g = 2.0 * (P @ y - q)
        z_new = project(y - step * g)
        if float((y - z_new) @ (z_new - z)) > 0.0:
            t = 1.0
            y = z_new.copy()
        else:
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = z_new + ((t - 1.0) / t_new) * (z_new - z)
            t = t_new
        step_inf = float(np.max(np.abs(z_new - z)))
        z = z_new
        iterations = k + 1
        if step_inf < 1e-11 or iterations % 25 == 0:
            kkt = kkt_at(z)
            if kkt <= tol:
                converged = True
                break
    if not converged:
        kkt = kkt_at(z)
        converged = kkt <= tol
    return z, iterations, converged, kkt


def _validate_predictors(pred: PredictorMatrix, cset: ConstraintSet) -> None:
    cset.require_feasible(pred.n_controls)
    if not (np.all(np.isfinite(pred.target)) and np.all(np.isfinite(pred.controls))):
        raise ValueError("predictors must be finite")


def _quadratic_parts(pred: PredictorMatrix, with_intercept: bool):
    """Quadratic form of the mean squared residual across predictor rows."""
    design = pred.controls
    if with_intercept:
        design = np.column_stack([design, np.ones(design.shape[0])])
    n_rows = design.shape[0]
    return design.T @ design / n_rows, design.T @ pred.target / n_rows


def solve_constrained_ls(pred: PredictorMatrix, cset: ConstraintSet, *,
                         tol: float = KKT_TOLERANCE,
                         max_iter: int = MAX_ITERATIONS) -> SolveReport:
    """Least squares fit of the target on the controls over the weight set.

    The objective is the squared residual norm divided by the number of
    predictor rows. Non-convergence is reported, not raised.
    """
    _validate_predictors(pred, cset)
    P, q = _quadratic_parts(pred, with_intercept=False)
    lo, hi = cset.bounds
    z, iterations, converged, kkt = _solve_quadratic(P, q, lo, hi,
                                                     tol=tol, max_iter=max_iter)
    residual = pred.target - pred.controls @ z
    weights = WeightVector(z)
    weights.require_within(cset)
    return SolveReport(weights=weights, intercept=None,
                       objective=float(residual @ residual) / pred.target.size,
                       kkt_residual=kkt, iterations=iterations,
                       converged=converged)


def solve_constrained_ls_intercept(pred: PredictorMatrix, cset: ConstraintSet, *,
                                   tol: float = KKT_TOLERANCE,
                                   max_iter: int = MAX_ITERATIONS) -> SolveReport:
    """Least squares over the weight set with a bounded intercept.

    The intercept enters every predictor row and is box constrained by the
    constraint set's intercept domain; it takes no part in the sum-to-one
    constraint.
    """
    if cset.intercept_domain is None:
        raise InfeasibleConstraintsError("constraint set has no intercept domain")
    _validate_predictors(pred, cset)
    P, q = _quadratic_parts(pred, with_intercept=True)
    lo, hi = cset.bounds
    z, iterations, converged, kkt = _solve_quadratic(
        P, q, lo, hi, dbox=cset.intercept_domain, tol=tol, max_iter=max_iter)
    w, d = z[:-1], float(z[-1])
    residual = pred.target - pred.controls @ w - d
    weights = WeightVector(w)
    weights.require_within(cset)
    return SolveReport(weights=weights, intercept=d,
                       objective=float(residual @ residual) / pred.target.size,
                       kkt_residual=kkt, iterations=iterations,
                       converged=converged)


def kkt_residual(pred: PredictorMatrix, cset: ConstraintSet, w: WeightVector,
                 d: float | None = None) -> float:
    """Max-norm KKT violation of (w, d) for the least squares problem.

    Combines the stationarity and complementary-slackness violation with
    any primal feasibility violation; zero only at a global optimum.
    """
    if d is not None and cset.intercept_domain is None:
        raise InfeasibleConstraintsError("intercept given without a domain")
    _validate_predictors(pred, cset)
    P, q = _quadratic_parts(pred, with_intercept=d is not None)
    z = np.asarray(w.values, dtype=float)
    dbox = None
    if d is not None:
        z = np.append(z, float(d))
        dbox = cset.intercept_domain
    g = 2.0 * (P @ z - q)
    lo, hi = cset.bounds
    res = _stationarity_residual(g, z, lo, hi, w.values.size, dbox)
    res = max(res, abs(float(w.values.sum()) - 1.0))
    res = max(res, float(np.max(lo - w.values, initial=0.0)))
    res = max(res, float(np.max(w.values - hi, initial=0.0)))
    if dbox is not None:
        res = max(res, dbox[0] - float(d), float(d) - dbox[1], 0.0)
    return res
