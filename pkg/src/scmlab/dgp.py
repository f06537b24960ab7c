"""Factor-model data generation with cross-sectionally dependent shocks.

Outcomes follow a two-factor linear model; the idiosyncratic part is a
moving average over neighboring units, so each period's outcome vector is
Gaussian with a pentadiagonal covariance. Alongside every simulated panel
the generator emits that exact per-period law for downstream risk work.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Protocol, runtime_checkable

import numpy as np

from .panel import PanelData

__all__ = [
    "CHI_SQUARE_SIGMAS",
    "FactorModelSpec",
    "GaussianOutcomeLaw",
    "PanelGenerator",
    "FactorModelGenerator",
    "draw_sigmas",
    "build_error_cov",
    "simulate",
]

CHI_SQUARE_SIGMAS = "chisq"
N_FACTORS = 2


@dataclass(frozen=True)
class FactorModelSpec:
    """Dimensions and noise law of one simulated panel.

    ``sigma_law`` is either ``"chisq"`` (each unit's shock variance drawn as
    0.5 * (g^2 + 1) with g standard normal) or an explicit per-unit variance
    vector of length j + 1. Factors and loadings are standard normal, with
    two factors throughout.
    """

    j: int
    t0: int
    t1: int
    seed: int
    b: float = 1.0
    sigma_law: str | tuple[float, ...] = CHI_SQUARE_SIGMAS

    def __post_init__(self) -> None:
        if self.j < 1 or self.t0 < 1 or self.t1 < 1:
            raise ValueError("j, t0 and t1 must all be at least 1")
        if not np.isfinite(self.b):
            raise ValueError("b must be finite")
        if self.sigma_law != CHI_SQUARE_SIGMAS:
            sigmas = tuple(float(s) for s in self.sigma_law)
            if len(sigmas) != self.j + 1:
                raise ValueError(f"need {self.j + 1} fixed variances")
            if any(not np.isfinite(s) or s <= 0.0 for s in sigmas):
                raise ValueError("fixed variances must be positive")
            object.__setattr__(self, "sigma_law", sigmas)


@dataclass(frozen=True)
class GaussianOutcomeLaw:
    """Per-period Gaussian law of the outcome vector, given the factor draw.

    Row t of ``mu`` is the mean of the period-t outcome vector (treated unit
    first); ``sigma`` is the time-invariant covariance. Periods are
    independent. ``t0`` splits rows into the pre and post horizons.
    """

    mu: np.ndarray
    sigma: np.ndarray
    t0: int

    def __post_init__(self) -> None:
        mu = np.array(self.mu, dtype=float)
        sigma = np.array(self.sigma, dtype=float)
        if mu.ndim != 2 or sigma.shape != (mu.shape[1], mu.shape[1]):
            raise ValueError("mu must be periods x units, sigma units x units")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("law entries must be finite")
        if self.t0 < 1 or self.t0 >= mu.shape[0]:
            raise ValueError("t0 must leave at least one row on each horizon")
        if np.abs(sigma - sigma.T).max() > 1e-12 * max(1.0, np.abs(sigma).max()):
            raise ValueError("sigma must be symmetric")
        n = sigma.shape[0]
        idx = np.arange(n)
        if np.any(sigma[np.abs(idx[:, None] - idx[None, :]) > 2] != 0.0):
            raise ValueError("sigma must be pentadiagonal")
        if np.linalg.eigvalsh(sigma)[0] < -1e-10:
            raise ValueError("sigma must be positive semidefinite")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_units(self) -> int:
        return self.mu.shape[1]

    @property
    def t1(self) -> int:
        return self.mu.shape[0] - self.t0

    @property
    def pre_rows(self) -> np.ndarray:
        return self.mu[: self.t0]

    @property
    def post_rows(self) -> np.ndarray:
        return self.mu[self.t0 :]


@runtime_checkable
class PanelGenerator(Protocol):
    """Anything that turns a seed into a panel, with its law when known.

    Generators without a tractable outcome law return None in the second
    slot; law-dependent operations then fail with an explicit error instead
    of silently guessing.
    """

    def generate(self, seed: int) -> tuple[PanelData, GaussianOutcomeLaw | None]:
        ...


def draw_sigmas(spec: FactorModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw per-unit shock variances as 0.5 * (g^2 + 1), g standard normal."""
    if spec.sigma_law != CHI_SQUARE_SIGMAS:
        raise ValueError("spec fixes the variances; nothing to draw")
    g = rng.standard_normal(spec.j + 1)
    return 0.5 * (g * g + 1.0)


def build_error_cov(sigmas, b: float) -> np.ndarray:
    """Covariance of the neighbor moving-average shocks.

    Unit i's shock is (1+b^2) v_i + b v_{i+1} + b v_{i-1} with independent
    v_i of variance sigmas[i] and out-of-range terms dropped, which makes
    the covariance pentadiagonal. Entries are formed in exact rational
    arithmetic and rounded to float once, so equal inputs give bit-equal
    matrices however the bands are traversed.
    """
    sigmas = [float(s) for s in sigmas]
    n = len(sigmas)
    if n < 2:
        raise ValueError("need a treated unit and at least one control")
    if any(not np.isfinite(s) or s <= 0.0 for s in sigmas):
        raise ValueError("variances must be positive")
    if not np.isfinite(b):
        raise ValueError("b must be finite")
    bf = Fraction(b)
    b2 = bf * bf
    k2 = (1 + b2) * (1 + b2)
    bk = bf * (1 + b2)
    svars = [Fraction(s) for s in sigmas]
    cov = np.zeros((n, n))
    for i in range(n):
        total = k2 * svars[i]
        if i > 0:
            total += b2 * svars[i - 1]
        if i < n - 1:
            total += b2 * svars[i + 1]
        cov[i, i] = float(total)
        if i < n - 1:
            cov[i, i + 1] = cov[i + 1, i] = float(bk * (svars[i] + svars[i + 1]))
        if i < n - 2:
            cov[i, i + 2] = cov[i + 2, i] = float(b2 * svars[i + 1])
    return cov


def simulate(spec: FactorModelSpec) -> tuple[PanelData, GaussianOutcomeLaw]:
    """Simulate one panel and return it with its exact outcome law.

    Draw order (fixed for reproducibility): loadings, factors, shock
    variances when random, then the shock innovations. No treatment effect
    is ever added, so observed post outcomes equal the untreated path.
    """
    rng = np.random.default_rng(spec.seed)
    n_units = spec.j + 1
    n_periods = spec.t0 + spec.t1
    loadings = rng.standard_normal((N_FACTORS, n_units))
    factors = rng.standard_normal((n_periods, N_FACTORS))
    if spec.sigma_law == CHI_SQUARE_SIGMAS:
        sigmas = draw_sigmas(spec, rng)
    else:
        sigmas = np.array(spec.sigma_law)
    v = rng.standard_normal((n_units, n_periods)) * np.sqrt(sigmas)[:, None]
    shocks = (1.0 + spec.b * spec.b) * v
    shocks[1:] += spec.b * v[:-1]
    shocks[:-1] += spec.b * v[1:]
    mu = factors @ loadings
    outcomes = mu.T + shocks
    panel = PanelData(outcomes=outcomes,
                      covariates=np.zeros((n_units, 0)),
                      t0=spec.t0, t1=spec.t1)
    law = GaussianOutcomeLaw(mu=mu, sigma=build_error_cov(sigmas, spec.b),
                             t0=spec.t0)
    return panel, law


@dataclass(frozen=True)
class FactorModelGenerator:
    """PanelGenerator adapter around the factor model."""

    j: int
    t0: int
    t1: int
    b: float = 1.0
    sigma_law: str | tuple[float, ...] = CHI_SQUARE_SIGMAS

    def generate(self, seed: int) -> tuple[PanelData, GaussianOutcomeLaw]:
        spec = FactorModelSpec(j=self.j, t0=self.t0, t1=self.t1, seed=seed,
                               b=self.b, sigma_law=self.sigma_law)
        return simulate(spec)
