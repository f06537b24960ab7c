"""Command line interface.

Subcommands: simulate (write synthetic panels), fit (one estimator on one
panel CSV), convergence and optimality (Monte Carlo tables), report
(regenerate tables and plots from emitted CSVs). Exit codes: 0 success,
2 invalid config, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dgp import FactorModelSpec, simulate
from .estimators import (Method, fit_best_select, fit_did, fit_dsc, fit_equal,
                         fit_ipw, fit_psm, fit_scm)
from .experiments import (ConfigError, derive_seed, emit_report, load_config,
                          load_experiment_csv, run_convergence, run_optimality)
from .oracle import LawUnavailable
from .panel import PanelFormatError, load_panel_csv, write_panel_csv
from .qp import ConstraintSet, InfeasibleConstraintsError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _cmd_simulate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for j in config.j_values:
        for t0 in config.t0_values:
            cell = derive_seed(derive_seed(config.master_seed, j), t0)
            spec = FactorModelSpec(j=j, t0=t0, t1=config.t1,
                                   seed=derive_seed(cell, 0))
            panel, _ = simulate(spec)
            path = out / f"panel_J{j}_T0{t0}.csv"
            write_panel_csv(panel, path)
            print(path)
    return EXIT_OK


def _derived_domain(panel) -> tuple[float, float]:
    bound = 10.0 * float(np.max(np.abs(panel.pre_outcomes)))
    return (-bound, bound)


def _cmd_fit(args: argparse.Namespace) -> int:
    panel = load_panel_csv(args.panel)
    method = Method(args.method)
    cset = ConstraintSet(args.clower, args.cupper)
    if method is Method.SCM:
        fit = fit_scm(panel, cset)
    elif method is Method.DSC:
        domain = _derived_domain(panel)
        fit = fit_dsc(panel, ConstraintSet(args.clower, args.cupper, domain))
    elif method is Method.DID:
        fit = fit_did(panel)
    elif method is Method.EQUAL:
        fit = fit_equal(panel)
    elif method is Method.SEL:
        fit = fit_best_select(panel)
    elif method is Method.PSM:
        fit = fit_psm(panel, ridge_lambda=args.ridge)
    else:
        fit = fit_ipw(panel, ridge_lambda=args.ridge)
    labels = panel.labels()
    document = {
        "method": fit.method.value,
        "treated_unit": labels[0],
        "control_units": labels[1:],
        "weights": [float(w) for w in fit.weights.values],
        "intercept": fit.intercept,
        "pre_loss": fit.pre_loss,
        "counterfactual": [float(v) for v in fit.counterfactual],
        "effects": [float(v) for v in fit.effects],
        "converged": fit.converged,
    }
    Path(args.out).write_text(json.dumps(document, indent=2) + "\n",
                              encoding="utf-8")
    print(args.out)
    return EXIT_OK


def _cmd_convergence(args: argparse.Namespace) -> int:
    result = run_convergence(load_config(args.config))
    emit_report(result, args.out, formats=("csv",))
    print(Path(args.out) / "convergence.csv")
    return EXIT_OK


def _cmd_optimality(args: argparse.Namespace) -> int:
    result = run_optimality(load_config(args.config))
    emit_report(result, args.out, formats=("csv",))
    print(Path(args.out) / "optimality.csv")
    return EXIT_OK


def _parse_formats(value: str) -> tuple[str, ...]:
    formats = tuple(tok.strip() for tok in value.split(",") if tok.strip())
    if not formats:
        raise argparse.ArgumentTypeError("at least one format is required")
    for fmt in formats:
        if fmt not in ("csv", "plotdata", "svg"):
            raise argparse.ArgumentTypeError(f"unknown format {fmt!r}")
    return formats


def _cmd_report(args: argparse.Namespace) -> int:
    indir = Path(args.indir)
    rows = []
    for stem in ("convergence", "optimality"):
        path = indir / f"{stem}.csv"
        if path.exists():
            rows.extend(load_experiment_csv(path).rows)
    if not rows:
        raise PanelFormatError(f"no experiment tables found in {indir}")
    from .experiments import ExperimentResult
    emit_report(ExperimentResult(rows=tuple(rows)), indir, formats=args.formats)
    print(indir)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scmlab",
        description="Synthetic-control estimation, risk oracle, and experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write synthetic panels for a config grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit one estimator on a panel CSV")
    p.add_argument("--panel", required=True)
    p.add_argument("--method", required=True, choices=[m.value for m in Method])
    p.add_argument("--clower", type=float, default=0.0)
    p.add_argument("--cupper", type=float, default=1.0)
    p.add_argument("--ridge", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("convergence", help="run the weight-convergence experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_convergence)

    p = sub.add_parser("optimality", help="run the risk-ratio experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_optimality)

    p = sub.add_parser("report", help="regenerate tables and plots from CSVs")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--formats", type=_parse_formats, default=("csv", "svg"))
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleConstraintsError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PanelFormatError as exc:
        print(f"error: bad data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: bad data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, LawUnavailable) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
