"""Exact decomposition of the TWFEIV estimate into 2x2 Wald-DID components.

Every pair of cohorts contributes one or two 2x2 designs:

* UnexposedExposed: exposed cohort k against the never-exposed cohort over
  PRE(k) vs POST(k).
* ExposedNotYetExposed: earlier cohort k (treated role) against later cohort
  l before l adopts, over PRE(k) vs MID(k,l).
* ExposedExposedShift: later cohort l (treated role) against already-exposed
  cohort k, over MID(k,l) vs POST(l).

Each component carries a closed-form variance of the demeaned instrument on
its subsample, a squared sample-share factor, and a first-stage DID; the
full-sample first-stage covariance equals the fs-weighted sum of the
first-stage DIDs, and the IV estimate equals the iv-weighted sum of the
Wald-DID ratios.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from .errors import EmptyCell, MissingControl, NoVariation, WeakDenominator
from .estimators import default_weak_threshold, twfeiv, twfeiv_weighted
from .panel import (
    NEVER,
    CohortPartition,
    PanelDataset,
    TimeWindow,
    infer_cohorts,
    residualize_two_way,
    window_mean,
)


class DesignKind(IntEnum):
    UNEXPOSED_EXPOSED = 0
    EXPOSED_NOT_YET_EXPOSED = 1
    EXPOSED_EXPOSED_SHIFT = 2

    def label(self) -> str:
        return {
            DesignKind.UNEXPOSED_EXPOSED: "UnexposedExposed",
            DesignKind.EXPOSED_NOT_YET_EXPOSED: "ExposedNotYetExposed",
            DesignKind.EXPOSED_EXPOSED_SHIFT: "ExposedExposedShift",
        }[self]


def _date(e) -> str:
    return "NEVER" if e == NEVER else str(int(e))


@dataclass(frozen=True)
class DesignCell:
    """One 2x2 DID-IV design: a treated cohort, a control cohort, two windows."""

    kind: DesignKind
    treated: float
    control: float
    window_base: TimeWindow
    window_shift: TimeWindow

    @property
    def empty_window(self) -> bool:
        return self.window_base.empty or self.window_shift.empty

    @property
    def cell_id(self) -> str:
        return f"{self.kind.label()}:{_date(self.treated)}:{_date(self.control)}"

    @property
    def pair_id(self) -> str:
        a, b = sorted((self.treated, self.control))
        return f"{_date(a)}:{_date(b)}"


@dataclass(frozen=True)
class WaldDIDComponent:
    """A design cell with its DIDs, variance term, weights, and Wald-DID."""

    cell: DesignCell
    did_outcome: Optional[float]
    did_treatment: Optional[float]
    variance: float
    share_sq: float
    fs_weight: float
    iv_weight: float
    wald_did: Optional[float]
    contribution: float  # exact share of beta_iv: fs_weight * did_outcome / C^{D,Z}

    @property
    def weak(self) -> bool:
        """True when both DIDs exist but the Wald ratio is undefined."""
        return self.did_treatment is not None and self.wald_did is None

    def as_dict(self) -> dict:
        return {
            "cell_id": self.cell.cell_id,
            "kind": self.cell.kind.label(),
            "treated": _date(self.cell.treated),
            "control": _date(self.cell.control),
            "window_base": self.cell.window_base.label(),
            "window_shift": self.cell.window_shift.label(),
            "empty_window": self.cell.empty_window,
            "did_outcome": self.did_outcome,
            "did_treatment": self.did_treatment,
            "variance": self.variance,
            "share_sq": self.share_sq,
            "fs_weight": self.fs_weight,
            "iv_weight": self.iv_weight,
            "wald_did": self.wald_did,
            "contribution": self.contribution,
        }


@dataclass(frozen=True)
class DecompositionResult:
    """Complete Wald-DID decomposition of a TWFEIV estimate."""

    components: tuple
    c_dz: float
    beta_iv: float
    weight_sum: float
    identity_residual: float
    negative_weight_count: dict
    kind_totals: dict
    spec: str
    weak_threshold: float
    cohorts: tuple
    shares: dict

    @property
    def n_weak(self) -> int:
        return sum(1 for c in self.components if c.weak)

    def as_dict(self) -> dict:
        return {
            "spec": self.spec,
            "beta_iv": self.beta_iv,
            "c_dz": self.c_dz,
            "weight_sum": self.weight_sum,
            "identity_residual": self.identity_residual,
            "weak_threshold": self.weak_threshold,
            "negative_weight_count": {k.label(): v for k, v in self.negative_weight_count.items()},
            "kind_totals": {k.label(): v for k, v in self.kind_totals.items()},
            "cohorts": [_date(e) for e in self.cohorts],
            "shares": {_date(e): s for e, s in self.shares.items()},
            "components": [c.as_dict() for c in self.components],
        }


def enumerate_cells(partition: CohortPartition) -> list:
    """All 2x2 design cells implied by the cohort structure.

    Cells with an empty required window (an exposed cohort adopting at t=1
    has no PRE period) are emitted flagged; their variance factor is zero.
    """
    if len(partition.cohorts) < 2:
        raise NoVariation("need at least two cohorts to form a 2x2 design")
    T = partition.n_periods
    exposed = [int(e) for e in partition.exposed_cohorts]
    cells = []
    if partition.has_never:
        for k in exposed:
            cells.append(
                DesignCell(
                    DesignKind.UNEXPOSED_EXPOSED,
                    treated=float(k),
                    control=NEVER,
                    window_base=TimeWindow.pre(k),
                    window_shift=TimeWindow.post(k, T),
                )
            )
    for i, k in enumerate(exposed):
        for l in exposed[i + 1 :]:
            cells.append(
                DesignCell(
                    DesignKind.EXPOSED_NOT_YET_EXPOSED,
                    treated=float(k),
                    control=float(l),
                    window_base=TimeWindow.pre(k),
                    window_shift=TimeWindow.mid(k, l),
                )
            )
            cells.append(
                DesignCell(
                    DesignKind.EXPOSED_EXPOSED_SHIFT,
                    treated=float(l),
                    control=float(k),
                    window_base=TimeWindow.mid(k, l),
                    window_shift=TimeWindow.post(l, T),
                )
            )
    cells.sort(key=lambda c: (int(c.kind), c.treated, c.control))
    return cells


def _means_table(panel: PanelDataset, partition: CohortPartition, variable: str, weighted: bool) -> dict:
    """Per-cohort arrays of per-period (optionally weighted) means."""
    values = getattr(panel, variable)
    if weighted and panel.unit_weights is not None:
        w = panel.unit_weights[panel.unit_index]
    else:
        w = np.ones(panel.n_rows)
    T = panel.n_periods
    table = {}
    for e in partition.cohorts:
        rows = partition.unit_mask(e)[panel.unit_index]
        num = np.bincount(panel.time_index[rows], weights=(w * values)[rows], minlength=T)
        den = np.bincount(panel.time_index[rows], weights=w[rows], minlength=T)
        with np.errstate(invalid="ignore", divide="ignore"):
            table[e] = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return table


def _did_from_tables(tables: dict, cell: DesignCell) -> float:
    base = slice(cell.window_base.start - 1, cell.window_base.stop)
    shift = slice(cell.window_shift.start - 1, cell.window_shift.stop)
    treated, control = tables[cell.treated], tables[cell.control]
    return float(
        (treated[shift].mean() - treated[base].mean())
        - (control[shift].mean() - control[base].mean())
    )


def wald_did(
    panel: PanelDataset,
    partition: CohortPartition,
    cell: DesignCell,
    weighted: bool = False,
    weak_threshold: Optional[float] = None,
):
    """(did_outcome, did_treatment, wald ratio or None) for one design cell."""
    if cell.empty_window:
        raise EmptyCell(f"cell {cell.cell_id} has an empty window")
    threshold = weak_threshold if weak_threshold is not None else default_weak_threshold(panel.d)

    def did(variable: str) -> float:
        shift_t = window_mean(panel, variable, partition, cell.treated, cell.window_shift, weighted)
        base_t = window_mean(panel, variable, partition, cell.treated, cell.window_base, weighted)
        shift_c = window_mean(panel, variable, partition, cell.control, cell.window_shift, weighted)
        base_c = window_mean(panel, variable, partition, cell.control, cell.window_base, weighted)
        return (shift_t - base_t) - (shift_c - base_c)

    did_y = did("y")
    did_d = did("d")
    ratio = did_y / did_d if abs(did_d) > threshold else None
    return did_y, did_d, ratio


def cell_variance(cell: DesignCell, partition: CohortPartition):
    """Closed-form (variance, share_sq) of the demeaned instrument on the
    cell's two-cohort subsample."""
    share = partition.share
    zbar = partition.exposure_share
    if cell.kind == DesignKind.UNEXPOSED_EXPOSED:
        k, u = cell.treated, cell.control
        n_ku = partition.pair_share(k, u)
        zk = zbar[k]
        variance = n_ku * (1.0 - n_ku) * zk * (1.0 - zk)
        share_sq = (share[k] + share[u]) ** 2
    elif cell.kind == DesignKind.EXPOSED_NOT_YET_EXPOSED:
        k, l = cell.treated, cell.control
        n_kl = partition.pair_share(k, l)
        zk, zl = zbar[k], zbar[l]
        variance = n_kl * (1.0 - n_kl) * ((zk - zl) / (1.0 - zl)) * ((1.0 - zk) / (1.0 - zl))
        share_sq = ((share[k] + share[l]) * (1.0 - zl)) ** 2
    else:
        l, k = cell.treated, cell.control
        n_kl = partition.pair_share(k, l)
        zk, zl = zbar[k], zbar[l]
        variance = n_kl * (1.0 - n_kl) * (zl / zk) * ((zk - zl) / zk)
        share_sq = ((share[k] + share[l]) * zk) ** 2
    return variance, share_sq


def decompose(
    panel: PanelDataset,
    weighted: bool = False,
    weak_threshold: Optional[float] = None,
) -> DecompositionResult:
    """Full Wald-DID decomposition of the (optionally weighted) TWFEIV estimate.

    Components with an undefined Wald ratio keep their exact contribution
    fs_weight * did_outcome / C^{D,Z}, so the identity residual is measured
    against the complete sum, not just the defined ratios.
    """
    panel.require_balanced("decompose")
    threshold = weak_threshold if weak_threshold is not None else default_weak_threshold(panel.d)
    use_weights = weighted and panel.unit_weights is not None
    if weighted and panel.unit_weights is None:
        raise NoVariation("weighted decomposition requires analytic weights")

    partition = infer_cohorts(panel, weighted=use_weights)
    estimate = (
        twfeiv_weighted(panel, weak_threshold=threshold)
        if use_weights
        else twfeiv(panel, weak_threshold=threshold)
    )

    cells = enumerate_cells(partition)
    tables = {
        "y": _means_table(panel, partition, "y", use_weights),
        "d": _means_table(panel, partition, "d", use_weights),
    }
    components = []
    for cell in cells:
        variance, share_sq = cell_variance(cell, partition)
        fs_weight = share_sq * variance
        if cell.empty_window:
            components.append(
                WaldDIDComponent(
                    cell=cell,
                    did_outcome=None,
                    did_treatment=None,
                    variance=variance,
                    share_sq=share_sq,
                    fs_weight=fs_weight,
                    iv_weight=0.0,
                    wald_did=None,
                    contribution=0.0,
                )
            )
            continue
        did_y = _did_from_tables(tables["y"], cell)
        did_d = _did_from_tables(tables["d"], cell)
        ratio = did_y / did_d if abs(did_d) > threshold else None
        iv_weight = fs_weight * did_d / estimate.c_dz
        components.append(
            WaldDIDComponent(
                cell=cell,
                did_outcome=did_y,
                did_treatment=did_d,
                variance=variance,
                share_sq=share_sq,
                fs_weight=fs_weight,
                iv_weight=iv_weight,
                wald_did=ratio,
                contribution=fs_weight * did_y / estimate.c_dz,
            )
        )

    weight_sum = sum(c.iv_weight for c in components)
    identity_residual = abs(sum(c.contribution for c in components) - estimate.beta_iv)

    negative = {kind: 0 for kind in DesignKind}
    totals = {}
    for kind in DesignKind:
        members = [c for c in components if c.cell.kind == kind]
        if not members:
            continue
        negative[kind] = sum(1 for c in members if c.iv_weight < 0)
        totals[kind] = {
            "count": len(members),
            "total_weight": sum(c.iv_weight for c in members),
            "total_wald_did": sum(c.wald_did for c in members if c.wald_did is not None),
            "weighted_wald_did": sum(c.contribution for c in members),
        }

    return DecompositionResult(
        components=tuple(components),
        c_dz=estimate.c_dz,
        beta_iv=estimate.beta_iv,
        weight_sum=weight_sum,
        identity_residual=identity_residual,
        negative_weight_count=negative,
        kind_totals=totals,
        spec="weighted" if use_weights else "plain",
        weak_threshold=threshold,
        cohorts=partition.cohorts,
        shares=partition.share,
    )


@dataclass(frozen=True)
class TwoCohortEstimate:
    """Subsample TWFEIV on two exposed cohorts and its two-term recombination."""

    beta_iv: float
    eny_wald: Optional[float]
    ees_wald: Optional[float]
    weight_eny: float
    weight_ees: float
    recombined: float
    residual: float


def two_cohort_estimate(panel: PanelDataset, k: int, l: int) -> TwoCohortEstimate:
    """TWFEIV on the {k, l} subsample, verified against the weighted average
    of the pair's ExposedNotYetExposed and ExposedExposedShift Wald-DIDs."""
    if not k < l:
        raise ValueError("two_cohort_estimate expects k < l")
    partition = infer_cohorts(panel)
    mask = (partition.unit_cohort == float(k)) | (partition.unit_cohort == float(l))
    sub = panel.subset_units(mask)
    result = decompose(sub)
    by_kind = {c.cell.kind: c for c in result.components}
    eny = by_kind[DesignKind.EXPOSED_NOT_YET_EXPOSED]
    ees = by_kind[DesignKind.EXPOSED_EXPOSED_SHIFT]
    recombined = eny.contribution + ees.contribution
    return TwoCohortEstimate(
        beta_iv=result.beta_iv,
        eny_wald=eny.wald_did,
        ees_wald=ees.wald_did,
        weight_eny=eny.iv_weight,
        weight_ees=ees.iv_weight,
        recombined=recombined,
        residual=abs(recombined - result.beta_iv),
    )


@dataclass(frozen=True)
class UnbalancedWeightEntry:
    cohort: float
    period: int
    residual_mean: Optional[float]
    cell_share: Optional[float]
    caet_estimate: Optional[float]
    weight: Optional[float]
    is_bias: bool
    flagged: bool
    flag_reason: str = ""

    def as_dict(self) -> dict:
        return {
            "cohort": _date(self.cohort),
            "period": self.period,
            "residual_mean": self.residual_mean,
            "cell_share": self.cell_share,
            "caet_estimate": self.caet_estimate,
            "weight": self.weight,
            "is_bias": self.is_bias,
            "flagged": self.flagged,
            "flag_reason": self.flag_reason,
        }


@dataclass(frozen=True)
class UnbalancedWeightReport:
    entries: tuple
    normalization: float
    control: str
    negative_flags: tuple
    n_components: int

    def weight_total(self) -> float:
        return sum(e.weight for e in self.entries if e.weight is not None)

    def as_dict(self) -> dict:
        return {
            "control": self.control,
            "normalization": self.normalization,
            "n_graph_components": self.n_components,
            "weight_total": self.weight_total(),
            "negative_flags": list(self.negative_flags),
            "entries": [e.as_dict() for e in self.entries],
        }


def _cell_mean(values, mask) -> Optional[float]:
    if not mask.any():
        return None
    return float(values[mask].mean())


def unbalanced_weights(panel: PanelDataset, control: str = "never") -> UnbalancedWeightReport:
    """Per-(cohort, period) weight diagnostics valid on unbalanced panels.

    Each exposed (e, t >= e) cell gets weight proportional to the mean
    two-way-residualized instrument, the cell's observation share, and a
    DID-based estimate of the instrument's effect on the treatment (reference
    period e-1, against the chosen control cohort). With control="last" the
    entries at t >= last adoption date are bias terms: their DID estimates a
    difference of effects rather than an effect.
    """
    partition = infer_cohorts(panel)
    if control == "never":
        if not partition.has_never:
            raise MissingControl("no never-exposed cohort in the data")
        control_cohort = NEVER
        last = None
    elif control == "last":
        if partition.has_never:
            raise MissingControl(
                "last-cohort control is for panels without a never-exposed cohort"
            )
        control_cohort = max(partition.exposed_cohorts)
        last = int(control_cohort)
    else:
        raise ValueError(f"unknown control {control!r}")

    res = residualize_two_way(
        panel.z,
        panel.unit_index,
        panel.time_index,
        panel.n_units,
        panel.n_periods,
    )
    t = panel.time_index + 1
    cohort_rows = {e: partition.unit_mask(e)[panel.unit_index] for e in partition.cohorts}
    n_total = panel.n_rows
    ctrl_rows = cohort_rows[control_cohort]

    entries = []
    for e in partition.exposed_cohorts:
        e_int = int(e)
        rows_e = cohort_rows[e]
        for period in range(e_int, panel.n_periods + 1):
            is_bias = last is not None and period >= last
            ref = e_int - 1
            mask_et = rows_e & (t == period)
            n_et = int(mask_et.sum())
            resid_mean = _cell_mean(res.residuals, mask_et)
            share = n_et / n_total if n_et else None

            reason = ""
            caet = None
            if n_et == 0:
                reason = "empty cohort-period cell"
            elif ref < 1:
                reason = "no reference period (cohort exposed at t=1)"
            else:
                d_et = _cell_mean(panel.d, mask_et)
                d_eref = _cell_mean(panel.d, rows_e & (t == ref))
                d_ct = _cell_mean(panel.d, ctrl_rows & (t == period))
                d_cref = _cell_mean(panel.d, ctrl_rows & (t == ref))
                if None in (d_eref, d_ct, d_cref):
                    reason = "missing control or reference cell"
                else:
                    caet = (d_et - d_eref) - (d_ct - d_cref)
            entries.append(
                UnbalancedWeightEntry(
                    cohort=e,
                    period=period,
                    residual_mean=resid_mean,
                    cell_share=share,
                    caet_estimate=caet,
                    weight=None,
                    is_bias=is_bias,
                    flagged=bool(reason),
                    flag_reason=reason,
                )
            )

    normalization = sum(
        en.residual_mean * en.cell_share * en.caet_estimate
        for en in entries
        if not en.flagged
    )
    if normalization == 0.0:
        raise WeakDenominator(0.0, 0.0, "unbalanced weight normalization")

    final = []
    negatives = []
    for en in entries:
        if en.flagged:
            final.append(en)
            continue
        w = en.residual_mean * en.cell_share * en.caet_estimate / normalization
        if w < 0:
            negatives.append(f"{_date(en.cohort)}@{en.period}")
        final.append(
            UnbalancedWeightEntry(
                cohort=en.cohort,
                period=en.period,
                residual_mean=en.residual_mean,
                cell_share=en.cell_share,
                caet_estimate=en.caet_estimate,
                weight=w,
                is_bias=en.is_bias,
                flagged=False,
            )
        )
    return UnbalancedWeightReport(
        entries=tuple(final),
        normalization=normalization,
        control=control,
        negative_flags=tuple(negatives),
        n_components=res.n_components,
    )
