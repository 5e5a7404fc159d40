"""Specification comparisons: Oaxaca-style difference decomposition and the
covariate within/between split.

The Oaxaca decomposition splits the difference between two estimates into a
Wald-DID-change term (base weights times value deltas), a weight-change term
(weight deltas times base values), and an interaction term, plus an optional
within term for covariate comparisons. Components are matched by cell id;
one-sided cells get a zero-weight phantom on the other side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import IncompatibleSpecs, WeakDenominator
from .estimators import _covariate_core, default_weak_threshold, twfeiv
from .panel import NEVER, PanelDataset, double_demean, infer_cohorts

_ZERO_WEIGHT = 1e-300


@dataclass(frozen=True)
class PairedComponent:
    cell_id: str
    base_weight: float
    alt_weight: float
    base_value: Optional[float]
    alt_value: Optional[float]

    def as_dict(self) -> dict:
        return {
            "cell_id": self.cell_id,
            "base_weight": self.base_weight,
            "alt_weight": self.alt_weight,
            "base_value": self.base_value,
            "alt_value": self.alt_value,
        }


@dataclass(frozen=True)
class SpecComparison:
    base_estimate: float
    alt_estimate: float
    term_walddids: float
    term_weights: float
    term_interaction: float
    term_within: float
    difference: float
    paired_components: tuple
    within_term_note: str = ""

    def as_dict(self) -> dict:
        return {
            "base_estimate": self.base_estimate,
            "alt_estimate": self.alt_estimate,
            "difference": self.difference,
            "term_walddids": self.term_walddids,
            "term_weights": self.term_weights,
            "term_interaction": self.term_interaction,
            "term_within": self.term_within,
            "within_term_note": self.within_term_note,
            "paired_components": [p.as_dict() for p in self.paired_components],
        }


@dataclass(frozen=True)
class ComponentVector:
    """A (cell id, weight, contribution) view of a decomposition.

    contribution = weight * value exactly; value may be undefined for weak
    cells, in which case the contribution still carries the cell's exact
    share of the estimate.
    """

    estimate: float
    cell_ids: tuple
    weights: tuple
    contributions: tuple
    values: tuple  # None where undefined
    cohorts: tuple


def component_vectors(result) -> ComponentVector:
    """Cell-level vectors from a DecompositionResult."""
    return ComponentVector(
        estimate=result.beta_iv,
        cell_ids=tuple(c.cell.cell_id for c in result.components),
        weights=tuple(c.iv_weight for c in result.components),
        contributions=tuple(c.contribution for c in result.components),
        values=tuple(c.wald_did for c in result.components),
        cohorts=result.cohorts,
    )


def pair_vectors(result) -> ComponentVector:
    """Pair-level vectors: cells of a decomposition grouped by cohort pair.

    A pair's weight is the sum of its cells' iv weights and its value is the
    two-cohort subsample estimate (exact by the two-cohort corollary).
    """
    order = []
    weights = {}
    contribs = {}
    for c in result.components:
        pid = c.cell.pair_id
        if pid not in weights:
            order.append(pid)
            weights[pid] = 0.0
            contribs[pid] = 0.0
        weights[pid] += c.iv_weight
        contribs[pid] += c.contribution
    values = tuple(
        contribs[p] / weights[p] if abs(weights[p]) > _ZERO_WEIGHT else None for p in order
    )
    return ComponentVector(
        estimate=result.beta_iv,
        cell_ids=tuple(order),
        weights=tuple(weights[p] for p in order),
        contributions=tuple(contribs[p] for p in order),
        values=values,
        cohorts=result.cohorts,
    )


def oaxaca(
    base: ComponentVector,
    alt: ComponentVector,
    within_term: float = 0.0,
    within_term_note: str = "",
) -> SpecComparison:
    """Decompose alt.estimate - base.estimate into weight/value delta terms.

    Base weights multiply value deltas and base values multiply weight
    deltas. Cells with undefined values enter through their exact
    contributions (folded into the Wald-DID term), preserving the identity.
    """
    if base.cohorts != alt.cohorts:
        raise IncompatibleSpecs(
            f"cohort structures differ: {base.cohorts} vs {alt.cohorts}"
        )

    def table(vec: ComponentVector) -> dict:
        return {
            cid: (w, k, v)
            for cid, w, k, v in zip(vec.cell_ids, vec.weights, vec.contributions, vec.values)
        }

    base_t, alt_t = table(base), table(alt)
    ids = list(base.cell_ids) + [cid for cid in alt.cell_ids if cid not in base_t]

    term_wdd = 0.0
    term_w = 0.0
    term_inter = 0.0
    paired = []
    for cid in ids:
        bw, bk, bv = base_t.get(cid, (0.0, 0.0, None))
        aw, ak, av = alt_t.get(cid, (0.0, 0.0, None))
        # effective values: exact contribution per unit weight; a zero-weight
        # cell with nonzero contribution leaves a residual carried below
        bv_eff = bk / bw if abs(bw) > _ZERO_WEIGHT else 0.0
        av_eff = ak / aw if abs(aw) > _ZERO_WEIGHT else 0.0
        residual = (ak - aw * av_eff) - (bk - bw * bv_eff)
        term_wdd += bw * (av_eff - bv_eff) + residual
        term_w += (aw - bw) * bv_eff
        term_inter += (aw - bw) * (av_eff - bv_eff)
        paired.append(PairedComponent(cid, bw, aw, bv, av))

    difference = alt.estimate - base.estimate
    return SpecComparison(
        base_estimate=base.estimate,
        alt_estimate=alt.estimate,
        term_walddids=term_wdd,
        term_weights=term_w,
        term_interaction=term_inter,
        term_within=within_term,
        difference=difference,
        paired_components=tuple(paired),
        within_term_note=within_term_note,
    )


@dataclass(frozen=True)
class CovariateSplit:
    """Within/between split of the covariate-adjusted TWFEIV estimate.

    The residualized instrument is partitioned into a within part (unit-level
    deviations from cohort-time means) and a between part (cohort-time
    variation); omega is the within share of the first-stage covariance.
    """

    beta_iv_x: float
    gamma: np.ndarray
    omega: float
    beta_within: Optional[float]
    beta_between: float
    c_within: float
    c_between: float
    c_dz_partial: float

    def as_dict(self) -> dict:
        return {
            "beta_iv_x": self.beta_iv_x,
            "gamma": [float(g) for g in self.gamma],
            "omega": self.omega,
            "beta_within": self.beta_within,
            "beta_between": self.beta_between,
            "c_within": self.c_within,
            "c_between": self.c_between,
            "c_dz_partial": self.c_dz_partial,
        }


def _cohort_time_means(values: np.ndarray, partition, panel: PanelDataset) -> np.ndarray:
    """Replace each row of an (N, T) matrix by its cohort's per-period mean."""
    out = np.empty_like(values)
    for e in partition.cohorts:
        mask = partition.unit_mask(e)
        out[mask] = values[mask].mean(axis=0)
    return out


def covariate_split(panel: PanelDataset, weak_threshold: Optional[float] = None) -> CovariateSplit:
    """Compute beta_iv_x, omega, and the within/between IV coefficients."""
    z_partial, gamma, p_hat, _ = _covariate_core(panel)
    threshold = weak_threshold if weak_threshold is not None else default_weak_threshold(panel.d)

    partition = infer_cohorts(panel)
    Y = panel.matrix("y")
    D = panel.matrix("d")
    nt = panel.n_rows

    # between part: double-demeaned cohort-time means of Z - Gamma'X; within
    # part is the remainder, so the two parts add back exactly
    q = panel.matrix("z") - p_hat
    between = double_demean(_cohort_time_means(q, partition, panel))
    within = z_partial - between

    c_w_d = float((D * within).sum() / nt)
    c_b_d = float((D * between).sum() / nt)
    c_w_y = float((Y * within).sum() / nt)
    c_b_y = float((Y * between).sum() / nt)
    c_total = c_w_d + c_b_d
    if abs(c_total) <= threshold:
        raise WeakDenominator(c_total, threshold, "covariate-adjusted first stage")

    beta_iv_x = (c_w_y + c_b_y) / c_total
    omega = c_w_d / c_total
    var_within = float((within * within).sum() / nt)
    if var_within <= threshold or abs(c_w_d) <= threshold:
        beta_within = None
        omega = 0.0
        beta_between = c_b_y / c_b_d
    else:
        beta_within = c_w_y / c_w_d
        beta_between = c_b_y / c_b_d

    return CovariateSplit(
        beta_iv_x=beta_iv_x,
        gamma=gamma,
        omega=omega,
        beta_within=beta_within,
        beta_between=beta_between,
        c_within=c_w_d,
        c_between=c_b_d,
        c_dz_partial=c_total,
    )


@dataclass(frozen=True)
class BetweenCell:
    pair_id: str
    s_weight: float
    beta_between: Optional[float]
    contribution: float
    c_dz_pair: float
    beta_iv_pair: Optional[float]
    c_p_pair: float
    beta_p_pair: Optional[float]

    def as_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "s_weight": self.s_weight,
            "beta_between": self.beta_between,
            "contribution": self.contribution,
            "c_dz_pair": self.c_dz_pair,
            "beta_iv_pair": self.beta_iv_pair,
            "c_p_pair": self.c_p_pair,
            "beta_p_pair": self.beta_p_pair,
        }


@dataclass(frozen=True)
class BetweenCellReport:
    cells: tuple
    beta_between: float
    c_between: float
    weight_total: float
    identity_residual: float

    def as_dict(self) -> dict:
        return {
            "beta_between": self.beta_between,
            "c_between": self.c_between,
            "weight_total": self.weight_total,
            "identity_residual": self.identity_residual,
            "cells": [c.as_dict() for c in self.cells],
        }


def _date(e) -> str:
    return "NEVER" if e == NEVER else str(int(e))


def between_cells(panel: PanelDataset, weak_threshold: Optional[float] = None) -> BetweenCellReport:
    """Per-pair decomposition of the between IV coefficient.

    For every cohort pair (k, l) the between coefficient on the pair's
    subsample combines the pair's plain IV pieces with the projection pieces;
    the pair weight is the squared pair share times the pair's between
    first-stage covariance relative to the full-sample one.
    """
    split = covariate_split(panel, weak_threshold=weak_threshold)
    _, _, p_hat, _ = _covariate_core(panel)
    threshold = weak_threshold if weak_threshold is not None else default_weak_threshold(panel.d)
    if abs(split.c_between) <= threshold:
        raise WeakDenominator(split.c_between, threshold, "between first-stage covariance")

    partition = infer_cohorts(panel)
    Z = panel.matrix("z")
    Y = panel.matrix("y")
    D = panel.matrix("d")
    T = panel.n_periods

    cells = []
    total = 0.0
    cohorts = list(partition.cohorts)
    for i, a in enumerate(cohorts):
        mask_a = partition.unit_mask(a)
        for b in cohorts[i + 1 :]:
            mask_b = partition.unit_mask(b)
            rows = mask_a | mask_b
            n_rows = int(rows.sum())
            norm = n_rows * T

            def pair_between(values: np.ndarray) -> np.ndarray:
                sub = np.empty((n_rows, T))
                sub[mask_a[rows]] = values[mask_a].mean(axis=0)
                sub[mask_b[rows]] = values[mask_b].mean(axis=0)
                return double_demean(sub)

            bz = pair_between(Z)  # = demeaned Z on the subsample (cohort-time level)
            bp = pair_between(p_hat)
            y_sub, d_sub = Y[rows], D[rows]
            c_dz_pair = float((d_sub * bz).sum() / norm)
            c_p_pair = float((d_sub * bp).sum() / norm)
            c_bz_pair = c_dz_pair - c_p_pair
            y_dz = float((y_sub * bz).sum() / norm)
            y_p = float((y_sub * bp).sum() / norm)

            pair_share_sq = (partition.share[a] + partition.share[b]) ** 2
            s_weight = pair_share_sq * c_bz_pair / split.c_between
            contribution = pair_share_sq * (y_dz - y_p) / split.c_between
            beta_b = (y_dz - y_p) / c_bz_pair if abs(c_bz_pair) > threshold else None
            cells.append(
                BetweenCell(
                    pair_id=f"{_date(a)}:{_date(b)}",
                    s_weight=s_weight,
                    beta_between=beta_b,
                    contribution=contribution,
                    c_dz_pair=c_dz_pair,
                    beta_iv_pair=y_dz / c_dz_pair if abs(c_dz_pair) > threshold else None,
                    c_p_pair=c_p_pair,
                    beta_p_pair=y_p / c_p_pair if abs(c_p_pair) > threshold else None,
                )
            )
            total += contribution

    return BetweenCellReport(
        cells=tuple(cells),
        beta_between=split.beta_between,
        c_between=split.c_between,
        weight_total=sum(c.s_weight for c in cells),
        identity_residual=abs(total - split.beta_between),
    )


def covariate_vectors(panel: PanelDataset, weak_threshold: Optional[float] = None):
    """Pair-level vectors for the covariate-adjusted spec plus its within term.

    Pair weights are (1 - omega) * s_b,kl and pair values are the between IV
    coefficients, so the weighted sum plus the within term reproduces
    beta_iv_x exactly.
    """
    split = covariate_split(panel, weak_threshold=weak_threshold)
    report = between_cells(panel, weak_threshold=weak_threshold)
    partition = infer_cohorts(panel)
    scale = 1.0 - split.omega
    within_term = split.omega * split.beta_within if split.beta_within is not None else 0.0
    vec = ComponentVector(
        estimate=split.beta_iv_x,
        cell_ids=tuple(c.pair_id for c in report.cells),
        weights=tuple(scale * c.s_weight for c in report.cells),
        contributions=tuple(scale * c.contribution for c in report.cells),
        values=tuple(c.beta_between for c in report.cells),
        cohorts=partition.cohorts,
    )
    return vec, within_term, split
