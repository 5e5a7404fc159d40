import numpy as np
import pandas as pd
import pytest

from didiv import DgpConfig, generate, load_panel


def random_config(rng: np.random.Generator, with_never: bool = None, noisy: bool = True,
                  n_cohorts: int = None, max_units: int = 400) -> DgpConfig:
    """A randomized staggered DGP for identity-style tests."""
    T = int(rng.integers(4, 31))
    if n_cohorts is None:
        n_cohorts = int(rng.integers(2, 7))
    if with_never is None:
        with_never = bool(rng.integers(0, 2))
    n_exposed = n_cohorts - int(with_never)
    if n_exposed < 2 and not with_never:
        n_exposed = 2
    n_exposed = max(1, n_exposed)
    # distinct adoption dates, at least one after t=1 so the instrument varies
    dates = sorted(rng.choice(np.arange(2, T + 1), size=min(n_exposed, T - 1), replace=False).tolist())
    total_units = int(rng.integers(40, max_units + 1))
    groups = len(dates) + int(with_never)
    counts = rng.multinomial(total_units - 2 * groups, np.ones(groups) / groups) + 2
    cohorts = []
    for e, c in zip(dates, counts):
        cohorts.append((int(e), int(c)))
    if with_never:
        cohorts.append((None, int(counts[-1])))
    caet = {}
    clatt = {}
    for e in dates:
        n_rel = T - e + 1
        caet[e] = tuple(rng.uniform(0.2, 0.9, n_rel))
        clatt[e] = tuple(rng.uniform(-2.0, 3.0, n_rel))
    return DgpConfig(
        T=T,
        cohorts=tuple(cohorts),
        caet_schedule=caet,
        clatt_schedule=clatt,
        mode="gaussian",
        unit_fe_sd=1.0 if noisy else 0.0,
        time_fe_sd=0.5 if noisy else 0.0,
        d_unit_fe_sd=0.2 if noisy else 0.0,
        noise_sd_d=0.1 if noisy else 0.0,
        noise_sd_y=0.5 if noisy else 0.0,
        seed=int(rng.integers(0, 2**31)),
    )


def with_weights(panel, rng: np.random.Generator, low=0.5, high=2.0):
    """Re-load a panel with random per-unit analytic weights attached."""
    frame = panel.to_dataframe()
    w = rng.uniform(low, high, panel.n_units)
    codes = pd.factorize(frame["unit"])[0]
    frame["weight"] = w[codes]
    x_cols = list(panel.x_names) if panel.x is not None else None
    return load_panel(frame, x_cols=x_cols, weight_col="weight")


def small_panel_frame():
    """A tiny hand-written 3-unit, 4-period staggered panel."""
    rows = []
    adoption = {"a": 2, "b": 3, "c": None}
    for unit, e in adoption.items():
        for t in range(1, 5):
            z = 1.0 if e is not None and t >= e else 0.0
            d = 0.5 * z
            y = float(t) + {"a": 0.0, "b": 1.0, "c": -1.0}[unit] + 2.0 * d
            rows.append({"unit": unit, "time": t, "Y": y, "D": d, "Z": z})
    return pd.DataFrame(rows)


@pytest.fixture
def small_panel():
    return load_panel(small_panel_frame())
