"""Synthetic staggered-instrument panels with known effect schedules, the
population value of the TWFEIV estimand under them, and Monte Carlo checks.

Effect schedules are per-cohort sequences over relative periods: the
first-stage schedule gives the instrument's effect on the treatment
(complier share for a binary treatment) and the outcome schedule gives the
treatment effect on compliers. The oracle evaluates the closed-form
population weights from cohort probabilities and dates alone, never from
generated data.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from .decomposition import DesignKind, decompose
from .errors import (
    DidivError,
    IncompleteSchedule,
    NoVariation,
    OracleDegenerate,
    WeakDenominator,
)
from .estimators import twfeiv
from .panel import NEVER, PanelDataset, TimeWindow, load_panel

Schedule = dict  # cohort -> scalar or sequence over relative periods 0,1,...


@dataclass(frozen=True)
class DgpConfig:
    """Recipe for a synthetic staggered-instrument panel.

    cohorts lists (adoption date or None for never-exposed, unit count).
    Schedules map each exposed adoption date to either a scalar (stable
    effect) or a sequence indexed by relative period. mode is "gaussian"
    (real-valued treatment, exact at zero noise), "binary" (Bernoulli
    complier draws), or "ordered" (ordered treatment with ordered_levels
    independent level increments; level_scale multiplies the outcome
    schedule per level).
    """

    T: int
    cohorts: tuple
    caet_schedule: Schedule
    clatt_schedule: Schedule
    mode: str = "gaussian"
    ordered_levels: int = 0
    level_scale: Optional[tuple] = None
    unit_fe_sd: float = 0.0
    time_fe_sd: float = 0.0
    d_unit_fe_sd: float = 0.0
    d_time_fe_sd: float = 0.0
    noise_sd_d: float = 0.0
    noise_sd_y: float = 0.0
    common_trends: Optional[tuple] = None
    n_covariates: int = 0
    covariate_mode: str = "unit"  # "unit" or "cohort"
    covariate_sd: float = 1.0
    covariate_coupling: float = 0.5
    random_adoption: bool = False
    seed: int = 0

    def exposed_dates(self) -> list:
        return sorted(e for e, _ in self.cohorts if e is not None)

    def has_never(self) -> bool:
        return any(e is None for e, _ in self.cohorts)

    def cohort_prob(self) -> dict:
        total = sum(n for _, n in self.cohorts)
        return {e: n / total for e, n in self.cohorts}

    def validate(self):
        dates = self.exposed_dates()
        if len(dates) != len(set(dates)):
            raise ValueError("adoption dates must be distinct")
        if not dates:
            raise NoVariation("no exposed cohort in the DGP")
        if any(n <= 0 for _, n in self.cohorts):
            raise ValueError("cohort counts must be positive")
        for e in dates:
            if not (1 <= e <= self.T):
                raise ValueError(f"adoption date {e} outside 1..{self.T}")
            for rel in range(self.T - e + 1):
                c = schedule_value(self.caet_schedule, e, rel, "caet")
                schedule_value(self.clatt_schedule, e, rel, "clatt")
                if self.mode != "gaussian" and not (0.0 <= c <= 1.0):
                    raise ValueError(
                        f"first-stage share {c} outside [0,1] for cohort {e}"
                    )


def schedule_value(schedule: Schedule, cohort: int, rel: int, which: str) -> float:
    """Effect value for a cohort at a relative period; errors if missing."""
    if cohort not in schedule:
        raise IncompleteSchedule(which, cohort, rel)
    entry = schedule[cohort]
    if np.isscalar(entry):
        return float(entry)
    seq = list(entry)
    if rel >= len(seq):
        raise IncompleteSchedule(which, cohort, rel)
    return float(seq[rel])


def _schedule_stable(schedule: Schedule, cohorts: Sequence[int], T: int) -> bool:
    for e in cohorts:
        vals = {schedule_value(schedule, e, rel, "?") for rel in range(T - e + 1)}
        if len(vals) > 1:
            return False
    return True


def generate(config: DgpConfig, rng: Optional[np.random.Generator] = None) -> PanelDataset:
    """Draw one panel from the DGP. Deterministic under a fixed seed."""
    config.validate()
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    T = config.T

    adoption = []
    for e, count in config.cohorts:
        adoption.extend([np.inf if e is None else float(e)] * count)
    adoption = np.array(adoption)
    n_units = len(adoption)
    if config.random_adoption:
        rng.shuffle(adoption)

    unit_fe = rng.normal(0.0, config.unit_fe_sd, n_units) if config.unit_fe_sd else np.zeros(n_units)
    time_fe = rng.normal(0.0, config.time_fe_sd, T) if config.time_fe_sd else np.zeros(T)
    d_unit_fe = (
        rng.normal(0.0, config.d_unit_fe_sd, n_units) if config.d_unit_fe_sd else np.zeros(n_units)
    )
    d_time_fe = rng.normal(0.0, config.d_time_fe_sd, T) if config.d_time_fe_sd else np.zeros(T)
    trend = np.zeros(T) if config.common_trends is None else np.asarray(config.common_trends, float)
    if len(trend) != T:
        raise ValueError("common_trends must have length T")

    t_grid = np.arange(1, T + 1)
    exposed_mat = t_grid[None, :] >= adoption[:, None]  # (N, T)

    caet = np.zeros((n_units, T))
    clatt = np.zeros((n_units, T))
    for i in range(n_units):
        e = adoption[i]
        if not np.isfinite(e):
            continue
        for t in range(int(e), T + 1):
            rel = t - int(e)
            caet[i, t - 1] = schedule_value(config.caet_schedule, int(e), rel, "caet")
            clatt[i, t - 1] = schedule_value(config.clatt_schedule, int(e), rel, "clatt")

    z = exposed_mat.astype(float)
    if config.mode == "gaussian":
        effect_d = caet * exposed_mat
        effect_y = clatt * caet * exposed_mat
        d = d_unit_fe[:, None] + d_time_fe[None, :] + effect_d
        if config.noise_sd_d:
            d = d + rng.normal(0.0, config.noise_sd_d, (n_units, T))
    elif config.mode == "binary":
        compliers = (rng.random((n_units, T)) < caet) & exposed_mat
        d = compliers.astype(float)
        effect_y = clatt * compliers
        d = d + d_unit_fe[:, None] + d_time_fe[None, :]
        if config.noise_sd_d:
            d = d + rng.normal(0.0, config.noise_sd_d, (n_units, T))
    elif config.mode == "ordered":
        J = config.ordered_levels
        if J < 1:
            raise ValueError("ordered mode requires ordered_levels >= 1")
        scale = np.ones(J) if config.level_scale is None else np.asarray(config.level_scale, float)
        if len(scale) != J:
            raise ValueError("level_scale must have length ordered_levels")
        increments = rng.random((J, n_units, T)) < caet[None, :, :]
        increments = increments & exposed_mat[None, :, :]
        d = increments.sum(axis=0).astype(float)
        effect_y = (increments * (clatt[None, :, :] * scale[:, None, None])).sum(axis=0)
    else:
        raise ValueError(f"unknown mode {config.mode!r}")

    y = unit_fe[:, None] + time_fe[None, :] + trend[None, :] + effect_y
    if config.noise_sd_y:
        y = y + rng.normal(0.0, config.noise_sd_y, (n_units, T))

    frame = {
        "unit": np.repeat(np.arange(1, n_units + 1), T),
        "time": np.tile(t_grid, n_units),
        "Y": y.ravel(),
        "D": d.ravel(),
        "Z": z.ravel(),
    }
    x_cols = None
    if config.n_covariates:
        x_cols = []
        for j in range(config.n_covariates):
            coupling = config.covariate_coupling * (t_grid[None, :] - adoption[:, None] + 1)
            coupling = np.where(exposed_mat, coupling, 0.0)
            if config.covariate_mode == "cohort":
                # one noise path per cohort: X varies only at cohort-time level
                xj = coupling.copy()
                for e in np.unique(adoption):
                    noise = rng.normal(0.0, config.covariate_sd, T)
                    xj[adoption == e] += noise
            else:
                xj = coupling + rng.normal(0.0, config.covariate_sd, (n_units, T))
            name = f"X{j + 1}"
            frame[name] = xj.ravel()
            x_cols.append(name)
    return load_panel(pd.DataFrame(frame), x_cols=x_cols)


def _window_bounds(window: TimeWindow):
    return range(window.start, window.stop + 1)


@dataclass(frozen=True)
class OracleCell:
    cell_id: str
    kind: DesignKind
    weight: float  # population limit of the component's iv weight
    base_weight: float  # first-stage weight before effect scaling (w_kU etc.)

    def as_dict(self) -> dict:
        return {
            "cell_id": self.cell_id,
            "kind": self.kind.label(),
            "weight": self.weight,
            "base_weight": self.base_weight,
        }


@dataclass(frozen=True)
class EstimandOracle:
    """Population value of the TWFEIV estimand under a DgpConfig."""

    estimand: float
    wclatt: float
    delta_clatt: float
    denominator: float
    cells: tuple
    cohort_weights: Optional[dict]  # per-cohort weights, defined when schedules are stable
    stable_schedules: bool
    effect_label: str  # "CLATT", "CACRT", or "LATE"
    aggregates: dict

    def as_dict(self) -> dict:
        return {
            "estimand": self.estimand,
            "wclatt": self.wclatt,
            "delta_clatt": self.delta_clatt,
            "denominator": self.denominator,
            "stable_schedules": self.stable_schedules,
            "effect_label": self.effect_label,
            "cohort_weights": (
                None
                if self.cohort_weights is None
                else {str(k): v for k, v in self.cohort_weights.items()}
            ),
            "cells": [c.as_dict() for c in self.cells],
            "aggregates": self.aggregates,
        }


def oracle_estimand(config: DgpConfig) -> EstimandOracle:
    """Evaluate the population weights and the estimand WCLATT - dCLATT.

    Uses only cohort probabilities, adoption dates, and the effect schedules.
    The ordered-treatment mode replaces the complier share with the summed
    level shares and the per-complier effect with the average causal
    response; random adoption relabels the effects without changing any
    formula.
    """
    config.validate()
    T = config.T
    prob = config.cohort_prob()
    dates = config.exposed_dates()
    p_never = prob.get(None, 0.0)

    if config.mode == "ordered":
        J = config.ordered_levels
        scale = np.ones(J) if config.level_scale is None else np.asarray(config.level_scale, float)
        caet_mult, effect_mult = float(J), float(scale.mean())
        effect_label = "CACRT"
    else:
        caet_mult, effect_mult = 1.0, 1.0
        effect_label = "LATE" if config.random_adoption else "CLATT"

    def caet1(e: int, t: int) -> float:
        return caet_mult * schedule_value(config.caet_schedule, e, t - e, "caet")

    def effect(e: int, t: int) -> float:
        return effect_mult * schedule_value(config.clatt_schedule, e, t - e, "clatt")

    def caet_window(e: int, window: TimeWindow) -> float:
        return sum(caet1(e, t) for t in _window_bounds(window)) / window.length

    def effect_cm(e: int, window: TimeWindow) -> float:
        num = sum(caet1(e, t) * effect(e, t) for t in _window_bounds(window))
        den = sum(caet1(e, t) for t in _window_bounds(window))
        return num / den if den else 0.0

    def effect_tc(e: int, window: TimeWindow) -> float:
        return sum(caet1(e, t) * effect(e, t) for t in _window_bounds(window)) / window.length

    # first-stage (denominator) weights and value
    wcaet = 0.0
    delta_caet = 0.0
    base_weights = {}
    if config.has_never():
        for k in dates:
            w = prob[k] * p_never * (T - (k - 1)) / T * (k - 1) / T
            base_weights[("UE", k, None)] = w
            wcaet += w * caet_window(k, TimeWindow.post(k, T))
    for i, k in enumerate(dates):
        for l in dates[i + 1 :]:
            w_k = prob[k] * prob[l] * (k - 1) / T * (l - k) / T
            w_l = prob[k] * prob[l] * (T - (l - 1)) / T * (l - k) / T
            base_weights[("ENY", k, l)] = w_k
            base_weights[("EES", k, l)] = w_l
            mid = TimeWindow.mid(k, l)
            post_l = TimeWindow.post(l, T)
            if not mid.empty:
                wcaet += w_k * caet_window(k, mid) if not TimeWindow.pre(k).empty else 0.0
            wcaet += w_l * caet_window(l, post_l)
            delta_caet += w_l * (caet_window(k, post_l) - caet_window(k, mid))
    denominator = wcaet - delta_caet
    if denominator <= 0:
        raise OracleDegenerate(
            f"population first-stage covariance {denominator} is not positive"
        )

    wclatt = 0.0
    delta_clatt = 0.0
    cells = []
    if config.has_never():
        for k in dates:
            post_k = TimeWindow.post(k, T)
            w_iv = base_weights[("UE", k, None)] * caet_window(k, post_k) / denominator
            wclatt += w_iv * effect_cm(k, post_k)
            cells.append(
                OracleCell(
                    f"UnexposedExposed:{k}:NEVER",
                    DesignKind.UNEXPOSED_EXPOSED,
                    w_iv,
                    base_weights[("UE", k, None)],
                )
            )
    sigma_by_pair = {}
    for i, k in enumerate(dates):
        for l in dates[i + 1 :]:
            mid = TimeWindow.mid(k, l)
            post_l = TimeWindow.post(l, T)
            w_k_iv = (
                base_weights[("ENY", k, l)] * caet_window(k, mid) / denominator
                if not TimeWindow.pre(k).empty
                else 0.0
            )
            if not TimeWindow.pre(k).empty:
                wclatt += w_k_iv * effect_cm(k, mid)
            sigma = base_weights[("EES", k, l)] / denominator
            sigma_by_pair[(k, l)] = sigma
            wclatt += sigma * effect_tc(l, post_l)
            delta_clatt += sigma * (effect_tc(k, post_l) - effect_tc(k, mid))
            # population limit of the EES component's empirical iv weight
            d_ees = caet_window(l, post_l) - (caet_window(k, post_l) - caet_window(k, mid))
            cells.append(
                OracleCell(
                    f"ExposedNotYetExposed:{k}:{l}",
                    DesignKind.EXPOSED_NOT_YET_EXPOSED,
                    w_k_iv,
                    base_weights[("ENY", k, l)],
                )
            )
            cells.append(
                OracleCell(
                    f"ExposedExposedShift:{l}:{k}",
                    DesignKind.EXPOSED_EXPOSED_SHIFT,
                    sigma * d_ees,
                    base_weights[("EES", k, l)],
                )
            )

    stable = _schedule_stable(config.caet_schedule, dates, T) and _schedule_stable(
        config.clatt_schedule, dates, T
    )
    cohort_weights = None
    if stable:
        cohort_weights = {}
        for k in dates:
            caet_k = caet1(k, k)
            w_total = 0.0
            if config.has_never():
                w_total += base_weights[("UE", k, None)] * caet_k / denominator
            for j in dates:
                if j < k:
                    w_total += base_weights[("EES", j, k)] * caet_k / denominator
                elif j > k and not TimeWindow.pre(k).empty:
                    w_total += base_weights[("ENY", k, j)] * caet_k / denominator
            cohort_weights[k] = w_total

    aggregates = {
        "caet_window_post": {str(k): caet_window(k, TimeWindow.post(k, T)) for k in dates},
        "effect_cm_post": {str(k): effect_cm(k, TimeWindow.post(k, T)) for k in dates},
        "effect_tc_post": {str(k): effect_tc(k, TimeWindow.post(k, T)) for k in dates},
    }
    return EstimandOracle(
        estimand=wclatt - delta_clatt,
        wclatt=wclatt,
        delta_clatt=delta_clatt,
        denominator=denominator,
        cells=tuple(cells),
        cohort_weights=cohort_weights,
        stable_schedules=stable,
        effect_label=effect_label,
        aggregates=aggregates,
    )


@dataclass(frozen=True)
class MonteCarloSummary:
    n_replications: int
    n_degenerate: int
    mean: float
    sd: float
    mc_se: float
    oracle_estimand: float
    deviation: float
    cell_weight_means: dict
    cell_weight_oracle: dict

    def as_dict(self) -> dict:
        return {
            "n_replications": self.n_replications,
            "n_degenerate": self.n_degenerate,
            "mean": self.mean,
            "sd": self.sd,
            "mc_se": self.mc_se,
            "oracle_estimand": self.oracle_estimand,
            "deviation": self.deviation,
            "cell_weight_means": self.cell_weight_means,
            "cell_weight_oracle": self.cell_weight_oracle,
        }


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("DIDIV_THREADS", "1")))
    except ValueError:
        return 1


def replication_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def monte_carlo(
    config: DgpConfig,
    replications: int,
    collect_weights: bool = True,
) -> MonteCarloSummary:
    """Distribution of the TWFEIV estimate over seeded replications.

    Degenerate replications (no variation / weak first stage) are counted
    and excluded. Aggregation order is fixed by replication index regardless
    of thread count.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    oracle = oracle_estimand(config)

    def run(index: int):
        panel = generate(config, rng=replication_rng(config.seed, index))
        try:
            if collect_weights:
                result = decompose(panel)
                weights = {c.cell.cell_id: c.iv_weight for c in result.components}
                return result.beta_iv, weights
            return twfeiv(panel).beta_iv, {}
        except (WeakDenominator, NoVariation):
            return None, None

    threads = _threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, range(replications)))
    else:
        outcomes = [run(i) for i in range(replications)]

    estimates = [b for b, _ in outcomes if b is not None]
    weight_runs = [w for _, w in outcomes if w is not None]
    n_degenerate = replications - len(estimates)
    est = np.array(estimates)
    mean = float(est.mean()) if len(est) else float("nan")
    sd = float(est.std(ddof=1)) if len(est) > 1 else 0.0
    mc_se = sd / np.sqrt(len(est)) if len(est) else float("nan")

    weight_means = {}
    if weight_runs:
        keys = weight_runs[0].keys()
        weight_means = {
            k: float(np.mean([w[k] for w in weight_runs if k in w])) for k in keys
        }
    return MonteCarloSummary(
        n_replications=replications,
        n_degenerate=n_degenerate,
        mean=mean,
        sd=sd,
        mc_se=float(mc_se),
        oracle_estimand=oracle.estimand,
        deviation=mean - oracle.estimand,
        cell_weight_means=weight_means,
        cell_weight_oracle={c.cell_id: c.weight for c in oracle.cells},
    )


def preset(name: str) -> DgpConfig:
    """Named DGP presets used by the CLI and the test suite."""
    if name == "figure1":
        return DgpConfig(
            T=100,
            cohorts=((34, 100), (80, 100), (None, 100)),
            caet_schedule={34: 0.15, 80: 0.10},
            clatt_schedule={34: 60.0, 80: 100.0},
            mode="gaussian",
            seed=34,
        )
    if name == "lemma3-stable":
        return DgpConfig(
            T=8,
            cohorts=((3, 600), (5, 600), (None, 600)),
            caet_schedule={3: 0.35, 5: 0.25},
            clatt_schedule={3: 2.0, 5: 1.0},
            mode="binary",
            unit_fe_sd=1.0,
            time_fe_sd=0.5,
            noise_sd_y=0.5,
            seed=7,
        )
    if name == "negative-weight":
        # first-stage effects grow over time in the early cohort, which turns
        # the ExposedExposedShift first-stage DID negative
        return DgpConfig(
            T=12,
            cohorts=((3, 400), (8, 400), (None, 400)),
            caet_schedule={3: tuple(0.10 + 0.08 * r for r in range(10)), 8: 0.15},
            clatt_schedule={3: tuple(2.0 + 0.30 * r for r in range(10)), 8: 1.0},
            mode="gaussian",
            seed=12,
        )
    if name == "random-adoption":
        return DgpConfig(
            T=8,
            cohorts=((2, 500), (4, 500), (6, 500), (None, 500)),
            caet_schedule={2: 0.4, 4: 0.3, 6: 0.2},
            clatt_schedule={2: 1.5, 4: 1.0, 6: 0.5},
            mode="binary",
            unit_fe_sd=1.0,
            time_fe_sd=0.5,
            noise_sd_y=0.5,
            random_adoption=True,
            seed=21,
        )
    if name == "covariates":
        return DgpConfig(
            T=10,
            cohorts=((3, 150), (6, 150), (None, 150)),
            caet_schedule={3: 0.4, 6: 0.3},
            clatt_schedule={3: 2.0, 6: 1.0},
            mode="gaussian",
            unit_fe_sd=1.0,
            time_fe_sd=0.5,
            noise_sd_d=0.05,
            noise_sd_y=0.3,
            n_covariates=2,
            covariate_mode="unit",
            covariate_sd=1.0,
            covariate_coupling=0.3,
            seed=55,
        )
    raise ValueError(f"unknown preset {name!r}")


PRESETS = ("figure1", "lemma3-stable", "negative-weight", "random-adoption", "covariates")


def config_from_toml(path: str) -> DgpConfig:
    """Load a DgpConfig from a TOML file.

    Schedules are tables mapping adoption dates (as strings) to a number or
    an array; cohorts is an array of [date-or-0, count] pairs where 0 means
    never exposed.
    """
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib

    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    cohorts = tuple(
        (None if int(e) == 0 else int(e), int(n)) for e, n in raw.pop("cohorts")
    )

    def sched(table):
        return {
            int(e): (tuple(v) if isinstance(v, (list, tuple)) else float(v))
            for e, v in table.items()
        }

    caet = sched(raw.pop("caet_schedule"))
    clatt = sched(raw.pop("clatt_schedule"))
    for key in ("common_trends", "level_scale"):
        if key in raw and raw[key] is not None:
            raw[key] = tuple(raw[key])
    return DgpConfig(cohorts=cohorts, caet_schedule=caet, clatt_schedule=clatt, **raw)
