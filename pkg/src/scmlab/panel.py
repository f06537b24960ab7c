"""Panel data model, validation, and CSV ingestion/serialization."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "PanelFormatError",
    "ColumnSpec",
    "PanelData",
    "PredictorMatrix",
    "build_predictors",
    "load_panel_csv",
    "write_panel_csv",
]


class PanelFormatError(ValueError):
    """Raised when panel input data violates the expected layout."""


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ColumnSpec:
    """Column names for long-format panel CSV files.

    ``covariates=None`` means every column beyond the four named ones is
    treated as a unit-level covariate, in header order.
    """

    unit: str = "unit"
    time: str = "time"
    outcome: str = "outcome"
    treated: str = "treated"
    covariates: tuple[str, ...] | None = None


@dataclass(frozen=True, eq=False)
class PanelData:
    """Outcomes and covariates for one treated unit and its donor pool.

    Row 0 of ``outcomes`` is the treated unit; the remaining rows are the
    controls. Columns are periods, pretreatment first.
    """

    outcomes: np.ndarray
    covariates: np.ndarray
    t0: int
    t1: int
    unit_labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        outcomes = _frozen_array(self.outcomes)
        covariates = _frozen_array(self.covariates)
        if outcomes.ndim != 2 or covariates.ndim != 2:
            raise PanelFormatError("outcomes and covariates must be 2-D")
        if self.t0 < 1 or self.t1 < 1:
            raise PanelFormatError("need at least one pre and one post period")
        if outcomes.shape[0] < 2:
            raise PanelFormatError("need at least one control unit")
        if outcomes.shape[1] != self.t0 + self.t1:
            raise PanelFormatError(
                f"outcomes have {outcomes.shape[1]} periods, expected {self.t0 + self.t1}")
        if covariates.shape[0] != outcomes.shape[0]:
            raise PanelFormatError("covariates and outcomes disagree on unit count")
        if not np.all(np.isfinite(outcomes)) or not np.all(np.isfinite(covariates)):
            raise PanelFormatError("panel entries must be finite")
        if self.unit_labels is not None:
            labels = tuple(str(u) for u in self.unit_labels)
            if len(labels) != outcomes.shape[0]:
                raise PanelFormatError("unit_labels length mismatch")
            object.__setattr__(self, "unit_labels", labels)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "covariates", covariates)

    @property
    def n_controls(self) -> int:
        return self.outcomes.shape[0] - 1

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def pre_outcomes(self) -> np.ndarray:
        return self.outcomes[:, : self.t0]

    @property
    def post_outcomes(self) -> np.ndarray:
        return self.outcomes[:, self.t0 :]

    def labels(self) -> tuple[str, ...]:
        """Unit labels, synthesizing ``u0..uJ`` when none were provided."""
        if self.unit_labels is not None:
            return self.unit_labels
        return tuple(f"u{i}" for i in range(self.outcomes.shape[0]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PanelData):
            return NotImplemented
        return (
            self.t0 == other.t0
            and self.t1 == other.t1
            and np.array_equal(self.outcomes, other.outcomes)
            and np.array_equal(self.covariates, other.covariates)
            and self.labels() == other.labels()
        )


@dataclass(frozen=True)
class PredictorMatrix:
    """Pretreatment outcomes stacked over covariates, one column per control."""

    target: np.ndarray
    controls: np.ndarray

    def __post_init__(self) -> None:
        target = _frozen_array(self.target)
        controls = _frozen_array(self.controls)
        if target.ndim != 1 or controls.ndim != 2:
            raise PanelFormatError("target must be 1-D, controls 2-D")
        if controls.shape[0] != target.shape[0]:
            raise PanelFormatError("controls row count must match target length")
        if controls.shape[1] < 1:
            raise PanelFormatError("need at least one control column")
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "controls", controls)

    @property
    def n_controls(self) -> int:
        return self.controls.shape[1]


def build_predictors(panel: PanelData) -> PredictorMatrix:
    """Stack each unit's pretreatment outcomes over its covariates."""
    target = np.concatenate([panel.pre_outcomes[0], panel.covariates[0]])
    controls = np.vstack([panel.pre_outcomes[1:].T, panel.covariates[1:].T])
    return PredictorMatrix(target=target, controls=controls)


def _order_times(tokens: set[str]) -> list[str]:
    try:
        return sorted(tokens, key=float)
    except ValueError:
        return sorted(tokens)


def load_panel_csv(path, schema: ColumnSpec | None = None) -> PanelData:
    """Read a long-format panel CSV into a PanelData.

    The treated unit is moved to row 0 regardless of file order, and times
    are rank-mapped onto the integer grid -T0+1..T1. The pre period count is
    the number of periods strictly before the first flagged one.
    """
    schema = schema or ColumnSpec()
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for name in (schema.unit, schema.time, schema.outcome, schema.treated):
            if name not in header:
                raise PanelFormatError(f"missing column {name!r} in {path}")
        if schema.covariates is None:
            cov_cols = tuple(c for c in header
                             if c not in (schema.unit, schema.time,
                                          schema.outcome, schema.treated))
        else:
            cov_cols = schema.covariates
            for name in cov_cols:
                if name not in header:
                    raise PanelFormatError(f"missing covariate column {name!r}")
        records = list(reader)
    if not records:
        raise PanelFormatError(f"{path} has no data rows")

    units: list[str] = []
    times: set[str] = set()
    cells: dict[tuple[str, str], dict] = {}
    for row in records:
        unit, time = row[schema.unit], row[schema.time]
        if unit not in units:
            units.append(unit)
        times.add(time)
        if (unit, time) in cells:
            raise PanelFormatError(f"duplicate cell ({unit},{time})")
        cells[(unit, time)] = row

    time_order = _order_times(times)
    missing = [(u, t) for u in units for t in time_order if (u, t) not in cells]
    if missing:
        listing = ", ".join(f"({u},{t})" for u, t in missing[:10])
        raise PanelFormatError(f"missing cells: {listing}")

    def number(row: dict, col: str) -> float:
        token = row[col]
        try:
            value = float(token)
        except (TypeError, ValueError):
            raise PanelFormatError(
                f"non-numeric {col!r} value {token!r} at "
                f"({row[schema.unit]},{row[schema.time]})") from None
        return value

    treated_units: list[str] = []
    first_flag: dict[str, int] = {}
    for u in units:
        for k, t in enumerate(time_order):
            flag = number(cells[(u, t)], schema.treated)
            if flag not in (0.0, 1.0):
                raise PanelFormatError(f"treated flag must be 0 or 1 at ({u},{t})")
            if flag == 1.0 and u not in first_flag:
                first_flag[u] = k
        if u in first_flag:
            treated_units.append(u)
    if len(treated_units) != 1:
        raise PanelFormatError(
            f"exactly one treated unit required, found {len(treated_units)}")
    treated = treated_units[0]

    t0 = first_flag[treated]
    t1 = len(time_order) - t0
    ordered_units = [treated] + [u for u in units if u != treated]
    outcomes = np.empty((len(ordered_units), len(time_order)))
    covariates = np.empty((len(ordered_units), len(cov_cols)))
    for i, u in enumerate(ordered_units):
        per_unit = [tuple(number(cells[(u, t)], c) for c in cov_cols)
                    for t in time_order]
        if len(set(per_unit)) > 1:
            raise PanelFormatError(f"covariates vary over time for unit {u}")
        covariates[i] = per_unit[0]
        for k, t in enumerate(time_order):
            outcomes[i, k] = number(cells[(u, t)], schema.outcome)
    if t0 < 1 or t1 < 1:
        raise PanelFormatError("treatment must start after the first period "
                               "and at or before the last one")
    return PanelData(outcomes=outcomes, covariates=covariates, t0=t0, t1=t1,
                     unit_labels=tuple(ordered_units))


def write_panel_csv(panel: PanelData, path) -> None:
    """Write a panel as long-format CSV that reloads bit-exactly."""
    path = Path(path)
    labels = panel.labels()
    grid = range(-panel.t0 + 1, panel.t1 + 1)
    cov_names = [f"z{k + 1}" for k in range(panel.n_covariates)]
    with path.open("w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["unit", "time", "outcome", "treated", *cov_names])
        for i, label in enumerate(labels):
            for k, t in enumerate(grid):
                flag = 1 if (i == 0 and t >= 1) else 0
                row = [label, t, format(panel.outcomes[i, k], ".17g"), flag]
                row.extend(format(v, ".17g") for v in panel.covariates[i])
                writer.writerow(row)
