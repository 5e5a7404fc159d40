"""Panel ingestion, validation, cohort structure, and demeaning primitives.

Long-format panels are normalized on load: time labels are mapped to
consecutive integers 1..T (original labels retained), rows are sorted by
(unit, time), and the instrument path is checked for staggered adoption.
Everything downstream consumes the resulting immutable PanelDataset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from .errors import (
    ConvergenceFailure,
    DuplicateCell,
    EmptyCell,
    InvalidInstrument,
    NotBalanced,
    NotStaggered,
    NoVariation,
    SchemaError,
)

# Sentinel adoption date for never-exposed units. Infinity sorts after every
# finite date, which gives the "NEVER last" cohort ordering for free.
NEVER = math.inf


@dataclass(frozen=True)
class TimeWindow:
    """Inclusive integer interval of normalized periods.

    PRE(a) = [1, a-1], MID(a, b) = [a, b-1], POST(a) = [a, T].
    """

    kind: str
    start: int
    stop: int  # inclusive

    @property
    def length(self) -> int:
        return self.stop - self.start + 1

    @property
    def empty(self) -> bool:
        return self.stop < self.start

    def periods(self) -> np.ndarray:
        return np.arange(self.start, self.stop + 1)

    def label(self) -> str:
        return f"{self.kind}[{self.start},{self.stop}]"

    @staticmethod
    def pre(a: int) -> "TimeWindow":
        return TimeWindow("PRE", 1, a - 1)

    @staticmethod
    def mid(a: int, b: int) -> "TimeWindow":
        return TimeWindow("MID", a, b - 1)

    @staticmethod
    def post(a: int, T: int) -> "TimeWindow":
        return TimeWindow("POST", a, T)


@dataclass(frozen=True)
class PanelDataset:
    """Validated long-format panel, sorted by (unit, time).

    Attributes
    ----------
    unit_ids : np.ndarray
        Distinct unit labels in sorted order, length N.
    time_labels : np.ndarray
        Distinct original time labels in sorted order, length T. Normalized
        period t corresponds to time_labels[t - 1].
    unit_index, time_index : np.ndarray of int
        Row-level indices into unit_ids / time_labels (time_index is 0-based).
    y, d, z : np.ndarray of float
        Outcome, treatment, binary instrument per row.
    x : np.ndarray or None
        Covariate matrix (n_rows, p) when covariates were supplied.
    unit_weights : np.ndarray or None
        Per-unit analytic weight, length N.
    balanced : bool
        True when every (unit, time) pair is observed exactly once.
    """

    unit_ids: np.ndarray
    time_labels: np.ndarray
    unit_index: np.ndarray
    time_index: np.ndarray
    y: np.ndarray
    d: np.ndarray
    z: np.ndarray
    x: Optional[np.ndarray] = None
    unit_weights: Optional[np.ndarray] = None
    balanced: bool = True
    x_names: tuple = field(default=())

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    @property
    def n_periods(self) -> int:
        return len(self.time_labels)

    @property
    def n_rows(self) -> int:
        return len(self.y)

    def require_balanced(self, what: str = "operation"):
        if not self.balanced:
            raise NotBalanced(f"{what} requires a balanced panel")

    def matrix(self, variable: str) -> np.ndarray:
        """Reshape a row-level variable into an (N, T) matrix (balanced only)."""
        self.require_balanced("matrix layout")
        values = getattr(self, variable)
        out = np.empty((self.n_units, self.n_periods), dtype=float)
        out[self.unit_index, self.time_index] = values
        return out

    def x_matrices(self) -> np.ndarray:
        """Covariates as a (p, N, T) stack (balanced only)."""
        self.require_balanced("matrix layout")
        if self.x is None:
            raise SchemaError("panel has no covariates")
        p = self.x.shape[1]
        out = np.empty((p, self.n_units, self.n_periods), dtype=float)
        for j in range(p):
            out[j, self.unit_index, self.time_index] = self.x[:, j]
        return out

    def row_weights(self) -> np.ndarray:
        """Per-row analytic weight (1.0 everywhere when none supplied)."""
        if self.unit_weights is None:
            return np.ones(self.n_rows)
        return self.unit_weights[self.unit_index]

    def subset_units(self, keep_mask: np.ndarray) -> "PanelDataset":
        """Restrict to units where keep_mask (length N) is True."""
        keep_rows = keep_mask[self.unit_index]
        kept_units = np.flatnonzero(keep_mask)
        remap = -np.ones(self.n_units, dtype=int)
        remap[kept_units] = np.arange(len(kept_units))
        return PanelDataset(
            unit_ids=self.unit_ids[kept_units],
            time_labels=self.time_labels,
            unit_index=remap[self.unit_index[keep_rows]],
            time_index=self.time_index[keep_rows],
            y=self.y[keep_rows],
            d=self.d[keep_rows],
            z=self.z[keep_rows],
            x=None if self.x is None else self.x[keep_rows],
            unit_weights=None if self.unit_weights is None else self.unit_weights[kept_units],
            balanced=self.balanced,
            x_names=self.x_names,
        )

    def to_dataframe(self) -> pd.DataFrame:
        data = {
            "unit": self.unit_ids[self.unit_index],
            "time": self.time_labels[self.time_index],
            "Y": self.y,
            "D": self.d,
            "Z": self.z,
        }
        if self.x is not None:
            names = self.x_names or tuple(f"X{j + 1}" for j in range(self.x.shape[1]))
            for j, name in enumerate(names):
                data[name] = self.x[:, j]
        if self.unit_weights is not None:
            data["weight"] = self.unit_weights[self.unit_index]
        return pd.DataFrame(data)


@dataclass(frozen=True)
class CohortPartition:
    """Cohort structure inferred from the instrument paths.

    Attributes
    ----------
    adoption : dict
        unit label -> adoption date e in 1..T, or NEVER.
    cohorts : tuple
        Distinct adoption dates sorted ascending; NEVER (if present) last.
    share : dict
        e -> n_e, fraction of units (or of analytic-weight mass).
    exposure_share : dict
        e -> Z-bar_e = |{t >= e}| / T; 0 for NEVER.
    unit_cohort : np.ndarray
        Adoption date per unit position (aligned with PanelDataset.unit_ids).
    """

    adoption: dict
    cohorts: tuple
    share: dict
    exposure_share: dict
    unit_cohort: np.ndarray
    n_periods: int

    def pair_share(self, a, b) -> float:
        """n_ab = n_a / (n_a + n_b)."""
        return self.share[a] / (self.share[a] + self.share[b])

    @property
    def exposed_cohorts(self) -> tuple:
        return tuple(e for e in self.cohorts if e != NEVER)

    @property
    def has_never(self) -> bool:
        return NEVER in self.cohorts

    def unit_mask(self, e) -> np.ndarray:
        return self.unit_cohort == e


def _column(frame: pd.DataFrame, name: str, role: str) -> pd.Series:
    if name not in frame.columns:
        raise SchemaError(f"missing {role} column {name!r}")
    return frame[name]


def load_panel(
    rows: Union[pd.DataFrame, Sequence[dict]],
    unit_col: str = "unit",
    time_col: str = "time",
    y_col: str = "Y",
    d_col: str = "D",
    z_col: str = "Z",
    x_cols: Optional[Sequence[str]] = None,
    weight_col: Optional[str] = None,
) -> PanelDataset:
    """Validate tabular records and build a PanelDataset.

    Time labels must be integers; they are normalized to 1..T positionally.
    Analytic weights must be constant within each unit (per-unit weights).
    """
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    if frame.empty:
        raise SchemaError("input contains no rows")

    units = _column(frame, unit_col, "unit")
    times = _column(frame, time_col, "time")
    y = _column(frame, y_col, "outcome")
    d = _column(frame, d_col, "treatment")
    z = _column(frame, z_col, "instrument")

    try:
        times_int = times.astype(np.int64)
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"time column {time_col!r} must be integer") from exc
    if not np.array_equal(times_int.to_numpy(), pd.to_numeric(times).to_numpy()):
        raise SchemaError(f"time column {time_col!r} must be integer")
    times = times_int
    for col, series in ((y_col, y), (d_col, d), (z_col, z)):
        vals = pd.to_numeric(series, errors="coerce")
        if vals.isna().any():
            raise SchemaError(f"column {col!r} contains missing or non-numeric values")

    unit_ids, unit_index = np.unique(units.to_numpy(), return_inverse=True)
    time_labels, time_index = np.unique(times.to_numpy(), return_inverse=True)
    n_units, n_periods = len(unit_ids), len(time_labels)

    cell = unit_index.astype(np.int64) * n_periods + time_index
    order = np.argsort(cell, kind="stable")
    cell = cell[order]
    dup = np.flatnonzero(np.diff(cell) == 0)
    if dup.size:
        bad = cell[dup[0]]
        raise DuplicateCell(unit_ids[bad // n_periods], time_labels[bad % n_periods])

    unit_index = unit_index[order]
    time_index = time_index[order]
    y_arr = y.to_numpy(dtype=float)[order]
    d_arr = d.to_numpy(dtype=float)[order]
    z_arr = z.to_numpy(dtype=float)[order]

    if not np.isin(z_arr, (0.0, 1.0)).all():
        bad = z_arr[~np.isin(z_arr, (0.0, 1.0))][0]
        raise InvalidInstrument(f"instrument column {z_col!r} has non-binary value {bad!r}")

    # Staggered adoption: within each unit (rows are time-sorted) Z never
    # steps down. Rows are grouped by unit after the sort above.
    drops = np.flatnonzero(
        (np.diff(z_arr) < 0) & (np.diff(unit_index) == 0)
    )
    if drops.size:
        r = drops[0] + 1
        raise NotStaggered(unit_ids[unit_index[r]], int(time_labels[time_index[r]]))

    x_arr = None
    x_names: tuple = ()
    if x_cols:
        cols = []
        for name in x_cols:
            series = pd.to_numeric(_column(frame, name, "covariate"), errors="coerce")
            if series.isna().any():
                raise SchemaError(f"covariate column {name!r} contains missing values")
            cols.append(series.to_numpy(dtype=float)[order])
        x_arr = np.column_stack(cols)
        x_names = tuple(x_cols)

    unit_weights = None
    if weight_col is not None:
        series = pd.to_numeric(_column(frame, weight_col, "weight"), errors="coerce")
        if series.isna().any():
            raise SchemaError(f"weight column {weight_col!r} contains missing values")
        w_rows = series.to_numpy(dtype=float)[order]
        if (w_rows < 0).any():
            raise SchemaError("analytic weights must be nonnegative")
        unit_weights = np.empty(n_units)
        unit_weights[unit_index] = w_rows
        if not np.array_equal(unit_weights[unit_index], w_rows):
            raise SchemaError("analytic weights must be constant within each unit")
        if not (unit_weights > 0).any():
            raise SchemaError("at least one analytic weight must be positive")

    balanced = len(y_arr) == n_units * n_periods

    return PanelDataset(
        unit_ids=unit_ids,
        time_labels=time_labels,
        unit_index=unit_index,
        time_index=time_index,
        y=y_arr,
        d=d_arr,
        z=z_arr,
        x=x_arr,
        unit_weights=unit_weights,
        balanced=balanced,
        x_names=x_names,
    )


def infer_cohorts(panel: PanelDataset, weighted: bool = False) -> CohortPartition:
    """Adoption dates, cohort shares, and exposure shares from Z paths.

    With weighted=True cohort shares are relative analytic-weight masses
    instead of unit counts (the WLS reading of the sample share).
    """
    T = panel.n_periods
    exposed = panel.z > 0
    unit_cohort = np.full(panel.n_units, NEVER)
    if exposed.any():
        # earliest exposed normalized period per unit
        first = np.full(panel.n_units, np.iinfo(np.int64).max, dtype=np.int64)
        np.minimum.at(first, panel.unit_index[exposed], panel.time_index[exposed] + 1)
        hit = first < np.iinfo(np.int64).max
        unit_cohort[hit] = first[hit].astype(float)

    finite = unit_cohort[unit_cohort != NEVER]
    if finite.size == 0:
        raise NoVariation("no unit is ever exposed to the instrument")

    cohorts = tuple(sorted(set(unit_cohort.tolist())))

    if weighted and panel.unit_weights is not None:
        mass = panel.unit_weights.astype(float)
        total = mass.sum()
    else:
        mass = np.ones(panel.n_units)
        total = float(panel.n_units)
    share = {e: float(mass[unit_cohort == e].sum() / total) for e in cohorts}
    exposure_share = {
        e: (0.0 if e == NEVER else (T - int(e) + 1) / T) for e in cohorts
    }
    adoption = {
        panel.unit_ids[i]: unit_cohort[i] for i in range(panel.n_units)
    }
    return CohortPartition(
        adoption=adoption,
        cohorts=cohorts,
        share=share,
        exposure_share=exposure_share,
        unit_cohort=unit_cohort,
        n_periods=T,
    )


def window_mean(
    panel: PanelDataset,
    variable: str,
    partition: CohortPartition,
    cohort,
    window: TimeWindow,
    weighted: bool = False,
) -> float:
    """Time-average over the window of cross-sectional cohort means.

    Each period contributes the (optionally analytic-weighted) mean of the
    variable over the cohort's units at that period; the window mean is the
    plain average of those per-period means.
    """
    if window.empty:
        raise EmptyCell(f"window {window.label()} is empty")
    values = getattr(panel, variable)
    in_cohort = partition.unit_mask(cohort)[panel.unit_index]
    t = panel.time_index + 1
    if weighted and panel.unit_weights is not None:
        w = panel.unit_weights[panel.unit_index]
    else:
        w = np.ones(panel.n_rows)

    total = 0.0
    for period in range(window.start, window.stop + 1):
        rows = in_cohort & (t == period)
        wsum = w[rows].sum()
        if not rows.any() or wsum == 0.0:
            raise EmptyCell(
                f"cohort {cohort} has no observations (or zero weight) at period {period}"
            )
        total += float(np.dot(w[rows], values[rows]) / wsum)
    return total / window.length


def double_demean(values: np.ndarray) -> np.ndarray:
    """Two-way demeaning of a balanced (N, T) matrix.

    Returns (V - unit means) - (time means - grand mean); the result has
    zero row and column means.
    """
    values = np.asarray(values, dtype=float)
    unit_means = values.mean(axis=1, keepdims=True)
    time_means = values.mean(axis=0, keepdims=True)
    return values - unit_means - time_means + values.mean()


def weighted_double_demean(values: np.ndarray, unit_weights: np.ndarray) -> np.ndarray:
    """Two-way demeaning under per-unit analytic weights (balanced matrix).

    The residual V - V-bar_i - V-bar^w_t + V-bar^w is orthogonal to every unit
    and time indicator in the weighted inner product: per-unit means are
    unweighted (weights are constant within a unit), per-period means are
    weight-averaged across units.
    """
    values = np.asarray(values, dtype=float)
    w = np.asarray(unit_weights, dtype=float).reshape(-1, 1)
    wsum = w.sum()
    unit_means = values.mean(axis=1, keepdims=True)
    time_means = (w * values).sum(axis=0, keepdims=True) / wsum
    grand = time_means.mean()
    return values - unit_means - time_means + grand


@dataclass(frozen=True)
class TwoWayResiduals:
    """Result of residualizing on unit and time indicators.

    residuals align with the input observation order; component[i] labels the
    connected component (of the unit-time incidence graph) each observation
    belongs to. Residuals are identified per component.
    """

    residuals: np.ndarray
    component: np.ndarray
    n_components: int
    sweeps: int
    final_change: float


def connected_components(unit_index: np.ndarray, time_index: np.ndarray, n_units: int, n_periods: int):
    """Label connected components of the bipartite unit-time incidence graph."""
    parent = np.arange(n_units + n_periods)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for u, t in zip(unit_index, time_index + n_units):
        ru, rt = find(u), find(t)
        if ru != rt:
            parent[rt] = ru

    roots = np.array([find(u) for u in unit_index])
    labels, comp = np.unique(roots, return_inverse=True)
    return comp, len(labels)


def residualize_two_way(
    values: np.ndarray,
    unit_index: np.ndarray,
    time_index: np.ndarray,
    n_units: int,
    n_periods: int,
    weights: Optional[np.ndarray] = None,
    tol: float = 1e-11,
    max_sweeps: int = 10_000,
) -> TwoWayResiduals:
    """Residuals of values on unit + time indicators by alternating projections.

    Iterated demeaning: subtract (weighted) unit means, then (weighted) time
    means, until the largest change in a sweep falls below tol. On balanced
    data one sweep reproduces double_demean exactly.
    """
    v = np.asarray(values, dtype=float).copy()
    if weights is None:
        w = np.ones(len(v))
    else:
        w = np.asarray(weights, dtype=float)

    unit_w = np.bincount(unit_index, weights=w, minlength=n_units)
    time_w = np.bincount(time_index, weights=w, minlength=n_periods)
    # avoid 0/0 on empty groups; empty groups contribute nothing
    unit_w = np.where(unit_w > 0, unit_w, 1.0)
    time_w = np.where(time_w > 0, time_w, 1.0)

    scale = max(1.0, float(np.abs(v).max())) if len(v) else 1.0
    change = 0.0
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        before = v.copy()
        means = np.bincount(unit_index, weights=w * v, minlength=n_units) / unit_w
        v -= means[unit_index]
        means = np.bincount(time_index, weights=w * v, minlength=n_periods) / time_w
        v -= means[time_index]
        change = float(np.abs(v - before).max()) if len(v) else 0.0
        if change <= tol * scale:
            break
    else:  # pragma: no cover - defensive, loop always breaks or exhausts
        pass
    if change > tol * scale:
        raise ConvergenceFailure(change, max_sweeps)

    comp, n_comp = connected_components(unit_index, time_index, n_units, n_periods)
    return TwoWayResiduals(
        residuals=v,
        component=comp,
        n_components=n_comp,
        sweeps=sweeps,
        final_change=change,
    )
