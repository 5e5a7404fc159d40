"""TWFE instrumental-variable estimators via Frisch-Waugh-Lovell.

The instrument is residualized on unit and time fixed effects (double
demeaning on balanced panels); the IV coefficient is then the ratio of two
covariances with the residualized instrument. A dense dummy-variable 2SLS
oracle provides an independent check for tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    CollinearCovariates,
    DegenerateWeights,
    NoVariation,
    OracleSingular,
    WeakDenominator,
)
from .panel import PanelDataset, weighted_double_demean

#: Singular-value cutoff for the covariate projection, relative to the
#: largest singular value of the double-demeaned covariate matrix.
SV_RTOL = 1e-10


def default_weak_threshold(d: np.ndarray) -> float:
    """Float-noise guard for first-stage denominators: 1e-12 * (max|D| + 1)."""
    return 1e-12 * (float(np.abs(d).max()) + 1.0)


@dataclass(frozen=True)
class IVEstimate:
    """TWFEIV point estimate with its FWL building blocks.

    beta_iv = reduced_form / first_stage; c_dz is the covariance of the
    treatment with the residualized instrument (1/NT normalization, weighted
    when spec == "weighted").
    """

    beta_iv: float
    first_stage: float
    reduced_form: float
    c_dz: float
    spec: str
    var_z: float

    def as_dict(self) -> dict:
        return {
            "beta_iv": self.beta_iv,
            "first_stage": self.first_stage,
            "reduced_form": self.reduced_form,
            "c_dz": self.c_dz,
            "var_z": self.var_z,
            "spec": self.spec,
        }


@dataclass(frozen=True)
class CovariateIVEstimate:
    """Covariate-adjusted TWFEIV and its within/between split."""

    beta_iv_x: float
    gamma: np.ndarray
    omega: float
    beta_within: Optional[float]
    beta_between: float

    def as_dict(self) -> dict:
        return {
            "beta_iv_x": self.beta_iv_x,
            "gamma": [float(g) for g in self.gamma],
            "omega": self.omega,
            "beta_within": self.beta_within,
            "beta_between": self.beta_between,
        }


def _twfeiv_core(
    panel: PanelDataset,
    unit_weights: np.ndarray,
    spec: str,
    weak_threshold: Optional[float],
) -> IVEstimate:
    Y = panel.matrix("y")
    D = panel.matrix("d")
    Z = panel.matrix("z")
    T = panel.n_periods
    w = np.asarray(unit_weights, dtype=float)
    wsum = w.sum()

    z_tilde = weighted_double_demean(Z, w)
    norm = wsum * T
    wz = w.reshape(-1, 1) * z_tilde
    var_z = float((wz * z_tilde).sum() / norm)
    if var_z <= 0.0:
        raise NoVariation("instrument has no variation after two-way demeaning")
    c_dz = float((wz * D).sum() / norm)
    c_yz = float((wz * Y).sum() / norm)

    threshold = weak_threshold if weak_threshold is not None else default_weak_threshold(panel.d)
    if abs(c_dz) <= threshold:
        raise WeakDenominator(c_dz, threshold, "first-stage covariance C^{D,Z}")

    return IVEstimate(
        beta_iv=c_yz / c_dz,
        first_stage=c_dz / var_z,
        reduced_form=c_yz / var_z,
        c_dz=c_dz,
        spec=spec,
        var_z=var_z,
    )


def twfeiv(panel: PanelDataset, weak_threshold: Optional[float] = None) -> IVEstimate:
    """Plain TWFEIV on a balanced panel.

    beta_iv = sum(Z-tilde * Y) / sum(Z-tilde * D), both sums normalized by NT.
    """
    panel.require_balanced("twfeiv")
    return _twfeiv_core(panel, np.ones(panel.n_units), "plain", weak_threshold)


def twfeiv_weighted(
    panel: PanelDataset,
    unit_weights: Optional[np.ndarray] = None,
    weak_threshold: Optional[float] = None,
) -> IVEstimate:
    """Analytic-weighted TWFEIV: all cross-sectional means are omega-weighted."""
    panel.require_balanced("twfeiv_weighted")
    w = unit_weights if unit_weights is not None else panel.unit_weights
    if w is None:
        raise DegenerateWeights("no analytic weights supplied")
    w = np.asarray(w, dtype=float)
    if not (w > 0).any():
        raise DegenerateWeights("all analytic weights are zero")
    return _twfeiv_core(panel, w, "weighted", weak_threshold)


def _covariate_core(panel: PanelDataset):
    """Shared pieces of the covariate-adjusted estimator.

    Returns (z_partial, gamma, p_hat) where z_partial is Z-tilde minus its
    least-squares projection on the double-demeaned covariates and p_hat is
    the fitted projection Gamma-hat'X (levels, not demeaned), both as (N, T)
    matrices.
    """
    panel.require_balanced("twfeiv_covariates")
    if panel.x is None:
        raise CollinearCovariates("panel has no covariates")
    ones = np.ones(panel.n_units)
    Z = panel.matrix("z")
    z_tilde = weighted_double_demean(Z, ones)
    X = panel.x_matrices()  # (p, N, T)
    p = X.shape[0]
    x_tilde = np.stack([weighted_double_demean(X[j], ones) for j in range(p)])

    design = x_tilde.reshape(p, -1).T  # (NT, p)
    u, s, vt = np.linalg.svd(design, full_matrices=False)
    if s[0] <= 0.0 or s[-1] < SV_RTOL * s[0]:
        raise CollinearCovariates(
            "double-demeaned covariate matrix is numerically singular"
        )
    gamma = vt.T @ ((u.T @ z_tilde.ravel()) / s)
    z_partial = z_tilde - np.tensordot(gamma, x_tilde, axes=(0, 0))
    p_hat = np.tensordot(gamma, X, axes=(0, 0))
    return z_partial, gamma, p_hat, z_tilde


def twfeiv_covariates(
    panel: PanelDataset, weak_threshold: Optional[float] = None
) -> CovariateIVEstimate:
    """Covariate-adjusted TWFEIV with the within/between split embedded.

    Gamma-hat projects the demeaned instrument on the demeaned covariates;
    the estimator is cov(Y, z-partial) / cov(D, z-partial).
    """
    from .comparison import covariate_split  # local import avoids a cycle

    split = covariate_split(panel, weak_threshold=weak_threshold)
    return CovariateIVEstimate(
        beta_iv_x=split.beta_iv_x,
        gamma=split.gamma,
        omega=split.omega,
        beta_within=split.beta_within,
        beta_between=split.beta_between,
    )


def dummy_regression_oracle(panel: PanelDataset, spec: str = "plain") -> float:
    """Brute-force 2SLS with explicit unit and time dummies (tests only).

    Builds the dense design [unit dummies, time dummies minus one, covariates],
    regresses D on [Z, dummies] for fitted values, then Y on [D-hat, dummies],
    and returns the coefficient on D-hat. spec is one of "plain", "weighted",
    "covariates".
    """
    if panel.n_rows > 10_000:
        raise ValueError("dummy oracle is restricted to N*T <= 10,000")
    n, T = panel.n_units, panel.n_periods
    rows = panel.n_rows

    unit_dummies = np.zeros((rows, n))
    unit_dummies[np.arange(rows), panel.unit_index] = 1.0
    time_dummies = np.zeros((rows, T - 1))
    late = panel.time_index >= 1
    time_dummies[np.flatnonzero(late), panel.time_index[late] - 1] = 1.0
    controls = [unit_dummies, time_dummies]
    if spec == "covariates":
        if panel.x is None:
            raise CollinearCovariates("covariate oracle needs covariates")
        controls.append(panel.x)
    F = np.hstack(controls)

    if spec == "weighted":
        if panel.unit_weights is None:
            raise DegenerateWeights("weighted oracle needs analytic weights")
        sw = np.sqrt(panel.unit_weights[panel.unit_index])
    else:
        sw = np.ones(rows)

    def solve(design, response):
        coef, _, rank, _ = np.linalg.lstsq(design * sw[:, None], response * sw, rcond=None)
        if rank < design.shape[1]:
            raise OracleSingular(
                f"oracle design is rank deficient ({rank} < {design.shape[1]})"
            )
        return coef

    first = solve(np.column_stack([panel.z, F]), panel.d)
    d_hat = np.column_stack([panel.z, F]) @ first
    second = solve(np.column_stack([d_hat, F]), panel.y)
    return float(second[0])
