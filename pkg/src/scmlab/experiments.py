"""Monte Carlo experiment drivers, their config, and report emission.

Two experiments: a weight-convergence run measuring how fast fitted
weights approach the risk-minimizing weights as the pretreatment window
grows, and a risk-ratio run comparing every estimator's risk against the
attainable floor. Replications are seeded by a documented mixing function,
so runs are reproducible and order-independent.
"""
from __future__ import annotations

import csv
import html
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .dgp import FactorModelGenerator, PanelGenerator
from .estimators import (DEFAULT_RIDGE, Method, fit_best_select, fit_did,
                         fit_dsc, fit_equal, fit_ipw, fit_propensity, fit_psm,
                         fit_scm)
from .oracle import optimal_weight, risk, risk_with_intercept
from .qp import ConstraintSet, NumericalError

__all__ = [
    "ConfigError",
    "MonteCarloConfig",
    "ResultRow",
    "ExperimentResult",
    "parse_config",
    "load_config",
    "load_experiment_csv",
    "derive_seed",
    "run_convergence",
    "run_optimality",
    "emit_report",
    "METRIC_WEIGHT_GAP",
    "METRIC_RISK_RATIO",
]

METRIC_WEIGHT_GAP = "weight_gap"
METRIC_RISK_RATIO = "risk_ratio"
INTERCEPT_METHODS = frozenset({Method.DSC, Method.DID})
CSV_HEADER = ("J", "T0", "estimator", "metric", "mean", "stderr", "R")
REPORT_FORMATS = ("csv", "plotdata", "svg")

_MASK64 = (1 << 64) - 1
_SEED_STRIDE = 0x9E3779B97F4A7C15
_SEED_MIX1 = 0xBF58476D1CE4E5B9
_SEED_MIX2 = 0x94D049BB133111EB


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configuration."""


def derive_seed(master: int, replication: int) -> int:
    """Derive an independent 64-bit seed for one replication.

    Applies the splitmix64 finalizer to master + (replication+1) * stride,
    with the usual stride and mixing constants. The map is bijective in the
    shifted master for each replication, so distinct replications always
    get distinct seeds and seeds can be derived in any order.
    """
    if replication < 0:
        raise ValueError("replication index must be nonnegative")
    x = (master + _SEED_STRIDE * (replication + 1)) & _MASK64
    x ^= x >> 30
    x = (x * _SEED_MIX1) & _MASK64
    x ^= x >> 27
    x = (x * _SEED_MIX2) & _MASK64
    x ^= x >> 31
    return x


_ALL_METHODS = tuple(Method)


@dataclass(frozen=True)
class MonteCarloConfig:
    """Grid, replication count, and estimator settings for one experiment.

    ``intercept_domain=None`` derives the intercept bounds per replication
    as +-10 times the largest pretreatment outcome magnitude, wide enough
    that the bound never binds in practice. ``replications`` defaults to
    the desk scale of 200.
    """

    j_values: tuple[int, ...] = (30, 50)
    t0_values: tuple[int, ...] = (50, 100, 200, 400)
    t1: int = 10
    replications: int = 200
    master_seed: int = 1729
    estimators: tuple[Method, ...] = _ALL_METHODS
    c_lower: float = 0.0
    c_upper: float = 1.0
    intercept_domain: tuple[float, float] | None = None
    ridge_lambda: float = DEFAULT_RIDGE

    def __post_init__(self) -> None:
        object.__setattr__(self, "j_values", tuple(int(j) for j in self.j_values))
        object.__setattr__(self, "t0_values", tuple(int(t) for t in self.t0_values))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if not self.j_values or any(j < 1 for j in self.j_values):
            raise ConfigError("j_values must be a nonempty list of counts >= 1")
        if not self.t0_values or any(t < 1 for t in self.t0_values):
            raise ConfigError("t0_values must be a nonempty list of counts >= 1")
        if self.t1 < 1:
            raise ConfigError("t1 must be at least 1")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not self.estimators:
            raise ConfigError("at least one estimator is required")
        if any(not isinstance(e, Method) for e in self.estimators):
            raise ConfigError("estimators must be Method values")
        if self.ridge_lambda <= 0.0:
            raise ConfigError("ridge_lambda must be positive")
        if self.intercept_domain is not None:
            lo, hi = self.intercept_domain
            if lo > hi:
                raise ConfigError("intercept_domain lower bound exceeds upper")
            object.__setattr__(self, "intercept_domain", (float(lo), float(hi)))


def _parse_int_list(value: str) -> tuple[int, ...]:
    return tuple(int(tok.strip()) for tok in value.split(",") if tok.strip())


def _parse_methods(value: str) -> tuple[Method, ...]:
    out = []
    for tok in value.split(","):
        tok = tok.strip().lower()
        if not tok:
            continue
        try:
            out.append(Method(tok))
        except ValueError:
            raise ConfigError(f"unknown estimator {tok!r}") from None
    return tuple(out)


def _parse_interval(value: str) -> tuple[float, float]:
    parts = [tok.strip() for tok in value.split(",")]
    if len(parts) != 2:
        raise ConfigError("intercept_domain needs exactly two comma-separated numbers")
    return (float(parts[0]), float(parts[1]))


_FIELD_PARSERS: dict[str, Callable[[str], object]] = {
    "j_values": _parse_int_list,
    "t0_values": _parse_int_list,
    "t1": int,
    "replications": int,
    "master_seed": int,
    "estimators": _parse_methods,
    "c_lower": float,
    "c_upper": float,
    "intercept_domain": _parse_interval,
    "ridge_lambda": float,
}


def parse_config(text: str) -> MonteCarloConfig:
    """Parse the flat key = value config format."""
    kwargs: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        parser = _FIELD_PARSERS.get(key)
        if parser is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in kwargs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            kwargs[key] = parser(value)
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from None
    return MonteCarloConfig(**kwargs)


def load_config(path) -> MonteCarloConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class ResultRow:
    """One aggregated cell of an experiment table."""

    j: int
    t0: int
    estimator: str
    metric: str
    mean: float
    stderr: float
    replications: int


@dataclass(frozen=True)
class ExperimentResult:
    """All aggregated cells of one experiment run, in emission order."""

    rows: tuple[ResultRow, ...]

    def value(self, j: int, t0: int, estimator: str, metric: str) -> ResultRow:
        for row in self.rows:
            if (row.j, row.t0, row.estimator, row.metric) == (j, t0, estimator, metric):
                return row
        raise KeyError(f"no row for ({j}, {t0}, {estimator}, {metric})")


def _aggregate(j: int, t0: int, estimator: str, metric: str,
               samples: np.ndarray) -> ResultRow:
    n = samples.size
    stderr = float(np.std(samples, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return ResultRow(j=j, t0=t0, estimator=estimator, metric=metric,
                     mean=float(np.mean(samples)), stderr=stderr, replications=n)


def _check_failures(failures: int, total: int, label: str) -> None:
    if failures > 0.01 * total:
        raise NumericalError(
            f"solver failed to converge in {failures} of {total} "
            f"replications ({label}); results would be unreliable")


def _default_generator(config: MonteCarloConfig) -> Callable[[int, int], PanelGenerator]:
    def make(j: int, t0: int) -> PanelGenerator:
        return FactorModelGenerator(j=j, t0=t0, t1=config.t1)
    return make


def _cell_seed(config: MonteCarloConfig, j: int, t0: int) -> int:
    return derive_seed(derive_seed(config.master_seed, j), t0)


def run_convergence(config: MonteCarloConfig,
                    make_generator: Callable[[int, int], PanelGenerator] | None = None,
                    ) -> ExperimentResult:
    """Average distance between fitted and risk-optimal weights, per cell.

    Each replication simulates a fresh panel, fits the weight estimator on
    it, computes the risk minimizer from that replication's own outcome
    law, and records the Euclidean gap between the two weight vectors.
    """
    make = make_generator or _default_generator(config)
    cset = ConstraintSet(config.c_lower, config.c_upper)
    rows = []
    for j in config.j_values:
        for t0 in config.t0_values:
            generator = make(j, t0)
            cell = _cell_seed(config, j, t0)
            gaps = np.empty(config.replications)
            failures = 0
            for rep in range(config.replications):
                panel, law = generator.generate(derive_seed(cell, rep))
                fit = fit_scm(panel, cset)
                best = optimal_weight(law, cset)
                if not (fit.converged and best.converged):
                    failures += 1
                gaps[rep] = float(np.linalg.norm(
                    fit.weights.values - best.weights.values))
            _check_failures(failures, config.replications, f"J={j}, T0={t0}")
            rows.append(_aggregate(j, t0, Method.SCM.value, METRIC_WEIGHT_GAP, gaps))
    return ExperimentResult(rows=tuple(rows))


def _derived_domain(panel) -> tuple[float, float]:
    bound = 10.0 * float(np.max(np.abs(panel.pre_outcomes)))
    return (-bound, bound)


def run_optimality(config: MonteCarloConfig,
                   make_generator: Callable[[int, int], PanelGenerator] | None = None,
                   ) -> ExperimentResult:
    """Average risk ratio of each estimator against the attainable floor.

    Intercept methods are judged against the floor over weights and
    intercept jointly; the rest against the floor over weights alone. Both
    floors and the fitted risks use each replication's own outcome law.
    """
    make = make_generator or _default_generator(config)
    wants_propensity = bool({Method.PSM, Method.IPW} & set(config.estimators))
    needs_plain = any(m not in INTERCEPT_METHODS for m in config.estimators)
    needs_intercept = bool(INTERCEPT_METHODS & set(config.estimators))
    rows = []
    for j in config.j_values:
        for t0 in config.t0_values:
            generator = make(j, t0)
            cell = _cell_seed(config, j, t0)
            ratios = {m: np.empty(config.replications) for m in config.estimators}
            failures = 0
            for rep in range(config.replications):
                panel, law = generator.generate(derive_seed(cell, rep))
                failed = False
                cset_plain = ConstraintSet(config.c_lower, config.c_upper)
                domain = config.intercept_domain or _derived_domain(panel)
                cset_int = ConstraintSet(config.c_lower, config.c_upper, domain)
                floor_plain = floor_int = None
                if needs_plain:
                    best = optimal_weight(law, cset_plain)
                    failed |= not best.converged
                    floor_plain = best.objective
                if needs_intercept:
                    best = optimal_weight(law, cset_int, with_intercept=True)
                    failed |= not best.converged
                    floor_int = best.objective
                model = (fit_propensity(panel, config.ridge_lambda)
                         if wants_propensity else None)
                for method in config.estimators:
                    if method is Method.SCM:
                        fit = fit_scm(panel, cset_plain)
                        failed |= not fit.converged
                    elif method is Method.DSC:
                        fit = fit_dsc(panel, cset_int)
                        failed |= not fit.converged
                    elif method is Method.DID:
                        fit = fit_did(panel)
                    elif method is Method.EQUAL:
                        fit = fit_equal(panel)
                    elif method is Method.SEL:
                        fit = fit_best_select(panel)
                    elif method is Method.PSM:
                        fit = fit_psm(panel, k=1, model=model)
                    else:
                        fit = fit_ipw(panel, model=model)
                    if method in INTERCEPT_METHODS:
                        fitted = risk_with_intercept(fit.weights, fit.intercept, law)
                        floor = floor_int
                    else:
                        fitted = risk(fit.weights, law)
                        floor = floor_plain
                    if floor is None or floor <= 0.0:
                        raise NumericalError(
                            "risk floor vanished; ratios are undefined")
                    ratios[method][rep] = fitted.value / floor
                failures += failed
            _check_failures(failures, config.replications, f"J={j}, T0={t0}")
            for method in config.estimators:
                rows.append(_aggregate(j, t0, method.value, METRIC_RISK_RATIO,
                                       ratios[method]))
    return ExperimentResult(rows=tuple(rows))


def _stem_for(metric: str) -> str:
    if metric == METRIC_WEIGHT_GAP:
        return "convergence"
    if metric == METRIC_RISK_RATIO:
        return "optimality"
    return metric


def _write_rows_csv(path: Path, rows: tuple[ResultRow, ...]) -> None:
    with path.open("w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([row.j, row.t0, row.estimator, row.metric,
                             repr(row.mean), repr(row.stderr), row.replications])


def load_experiment_csv(path) -> ExperimentResult:
    """Reload an emitted experiment CSV, exactly."""
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != CSV_HEADER:
            raise ConfigError(f"unexpected header {header!r} in {path}")
        for record in reader:
            if len(record) != len(CSV_HEADER):
                raise ConfigError(f"malformed row {record!r} in {path}")
            rows.append(ResultRow(j=int(record[0]), t0=int(record[1]),
                                  estimator=record[2], metric=record[3],
                                  mean=float(record[4]), stderr=float(record[5]),
                                  replications=int(record[6])))
    return ExperimentResult(rows=tuple(rows))


def _figures_for(stem: str, rows: list[ResultRow]):
    """Group rows into line-plot figures: x is always the pre period count."""
    figures = []
    if stem == "optimality":
        for j in sorted({row.j for row in rows}):
            series = []
            for estimator in dict.fromkeys(r.estimator for r in rows if r.j == j):
                pts = [(r.t0, r.mean) for r in rows
                       if r.j == j and r.estimator == estimator]
                pts.sort()
                series.append((estimator, pts))
            figures.append((f"{stem}_J{j}", rows[0].metric, series))
    else:
        series = []
        for j in sorted({row.j for row in rows}):
            pts = sorted((r.t0, r.mean) for r in rows if r.j == j)
            series.append((f"J={j}", pts))
        figures.append((stem, rows[0].metric, series))
    return figures


def _svg_escape(text: str) -> str:
    return html.escape(str(text), quote=True)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd",
            "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _write_svg(path: Path, title: str, ylabel: str, series) -> None:
    """Hand-rolled SVG line plot: axes, ticks, one polyline per series."""
    width, height = 640, 480
    left, right, top, bottom = 80, 160, 50, 60
    xs = [x for _, pts in series for x, _ in pts]
    ys = [y for _, pts in series for _, y in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(x: float) -> float:
        return left + (x - x_lo) / (x_hi - x_lo) * (width - left - right)

    def sy(y: float) -> float:
        return height - bottom - (y - y_lo) / (y_hi - y_lo) * (height - top - bottom)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="15">'
        f'{_svg_escape(title)}</text>',
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" '
        f'y2="{height - bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>',
        f'<text x="{(left + width - right) / 2:.1f}" y="{height - 16}" '
        f'text-anchor="middle">T0</text>',
        f'<text x="20" y="{(top + height - bottom) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 20 {(top + height - bottom) / 2:.1f})">'
        f'{_svg_escape(ylabel)}</text>',
    ]
    for tick in np.linspace(x_lo, x_hi, 5):
        px = sx(tick)
        parts.append(f'<line x1="{px:.2f}" y1="{height - bottom}" x2="{px:.2f}" '
                     f'y2="{height - bottom + 5}" stroke="black"/>')
        parts.append(f'<text x="{px:.2f}" y="{height - bottom + 20}" '
                     f'text-anchor="middle">{tick:.4g}</text>')
    for tick in np.linspace(y_lo, y_hi, 5):
        py = sy(tick)
        parts.append(f'<line x1="{left - 5}" y1="{py:.2f}" x2="{left}" '
                     f'y2="{py:.2f}" stroke="black"/>')
        parts.append(f'<text x="{left - 9}" y="{py + 4:.2f}" '
                     f'text-anchor="end">{tick:.4g}</text>')
    for idx, (label, pts) in enumerate(series):
        color = _PALETTE[idx % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5" '
                         f'fill="{color}"/>')
        ly = top + 16 * idx
        parts.append(f'<line x1="{width - right + 12}" y1="{ly}" '
                     f'x2="{width - right + 36}" y2="{ly}" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{width - right + 42}" y="{ly + 4}">'
                     f'{_svg_escape(label)}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")


def emit_report(result: ExperimentResult, out_dir,
                formats=("csv",)) -> None:
    """Write experiment tables and plots into a directory.

    ``formats`` is a subset of csv, plotdata, and svg. Rows are grouped by
    metric into one table per experiment kind (convergence, optimality).
    """
    chosen = tuple(dict.fromkeys(formats))
    unknown = [f for f in chosen if f not in REPORT_FORMATS]
    if unknown:
        raise ValueError(f"unknown report formats: {unknown}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    groups: dict[str, list[ResultRow]] = {}
    for row in result.rows:
        groups.setdefault(_stem_for(row.metric), []).append(row)
    for stem, rows in groups.items():
        if "csv" in chosen:
            _write_rows_csv(out / f"{stem}.csv", tuple(rows))
        if "plotdata" not in chosen and "svg" not in chosen:
            continue
        for name, ylabel, series in _figures_for(stem, rows):
            if "plotdata" in chosen:
                for label, pts in series:
                    tag = label.replace("=", "")
                    lines = [f"# T0 {ylabel}"]
                    lines += [f"{x} {repr(y)}" for x, y in pts]
                    (out / f"{name}_{tag}.dat").write_text(
                        "\n".join(lines) + "\n", encoding="utf-8")
            if "svg" in chosen:
                _write_svg(out / f"{name}.svg", name, ylabel, series)
