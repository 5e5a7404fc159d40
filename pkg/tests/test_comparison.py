import numpy as np
import pytest

from didiv import (
    DgpConfig,
    IncompatibleSpecs,
    between_cells,
    component_vectors,
    covariate_split,
    covariate_vectors,
    decompose,
    generate,
    load_panel,
    oaxaca,
    pair_vectors,
    twfeiv_covariates,
)

from conftest import random_config, with_weights


def covariate_config(rng, covariate_mode="unit"):
    T = int(rng.integers(6, 14))
    dates = sorted(rng.choice(np.arange(2, T + 1), size=2, replace=False).tolist())
    return DgpConfig(
        T=T,
        cohorts=((dates[0], 40), (dates[1], 40), (None, 40)),
        caet_schedule={e: float(rng.uniform(0.3, 0.8)) for e in dates},
        clatt_schedule={e: float(rng.uniform(-1, 2)) for e in dates},
        mode="gaussian",
        unit_fe_sd=1.0,
        time_fe_sd=0.5,
        noise_sd_d=0.1,
        noise_sd_y=0.5,
        n_covariates=2,
        covariate_mode=covariate_mode,
        covariate_coupling=0.3,
        seed=int(rng.integers(0, 2**31)),
    )


class TestOaxaca:
    def test_identical_specs_give_zero_terms(self):
        rng = np.random.default_rng(61)
        panel = generate(random_config(rng, max_units=80))
        vec = component_vectors(decompose(panel))
        cmp = oaxaca(vec, vec)
        assert cmp.difference == 0.0
        assert cmp.term_walddids == pytest.approx(0.0, abs=1e-14)
        assert cmp.term_weights == pytest.approx(0.0, abs=1e-14)
        assert cmp.term_interaction == pytest.approx(0.0, abs=1e-14)

    def test_weighted_vs_plain_identity(self):
        rng = np.random.default_rng(62)
        for _ in range(5):
            panel = with_weights(generate(random_config(rng, max_units=100)), rng)
            base = component_vectors(decompose(panel, weighted=False))
            alt = component_vectors(decompose(panel, weighted=True))
            cmp = oaxaca(base, alt)
            terms = (
                cmp.term_walddids + cmp.term_weights + cmp.term_interaction + cmp.term_within
            )
            assert terms == pytest.approx(
                cmp.difference, abs=1e-10 * max(1.0, abs(cmp.difference))
            )

    def test_covariates_vs_plain_identity(self):
        rng = np.random.default_rng(63)
        for _ in range(3):
            panel = generate(covariate_config(rng))
            base = pair_vectors(decompose(panel))
            alt, within, _ = covariate_vectors(panel)
            cmp = oaxaca(base, alt, within_term=within)
            terms = (
                cmp.term_walddids + cmp.term_weights + cmp.term_interaction + cmp.term_within
            )
            assert terms == pytest.approx(
                cmp.difference, abs=1e-10 * max(1.0, abs(cmp.difference))
            )

    def test_incompatible_cohorts_rejected(self):
        rng = np.random.default_rng(64)
        a = component_vectors(decompose(generate(random_config(rng, max_units=60))))
        while True:
            b_res = decompose(generate(random_config(rng, max_units=60)))
            if b_res.cohorts != a.cohorts:
                break
        with pytest.raises(IncompatibleSpecs):
            oaxaca(a, component_vectors(b_res))


class TestCovariateSplit:
    def test_omega_convex_combination(self):
        rng = np.random.default_rng(65)
        for _ in range(5):
            panel = generate(covariate_config(rng))
            split = covariate_split(panel)
            if split.beta_within is None:
                continue
            combo = split.omega * split.beta_within + (1 - split.omega) * split.beta_between
            assert combo == pytest.approx(split.beta_iv_x, rel=1e-10)

    def test_split_matches_estimator_api(self):
        rng = np.random.default_rng(66)
        panel = generate(covariate_config(rng))
        split = covariate_split(panel)
        est = twfeiv_covariates(panel)
        assert est.beta_iv_x == split.beta_iv_x
        assert est.omega == split.omega

    def test_cohort_level_covariates_have_no_within_part(self):
        # covariates that vary only at the cohort-time level leave nothing
        # for the within component
        rng = np.random.default_rng(67)
        panel = generate(covariate_config(rng, covariate_mode="cohort"))
        split = covariate_split(panel)
        assert abs(split.c_within) < 1e-8 * max(1.0, abs(split.c_between))
        assert split.omega == pytest.approx(0.0, abs=1e-8)

    def test_zero_gamma_reduces_to_plain(self):
        # covariates orthogonal to the instrument: beta_iv_x equals plain IV
        rng = np.random.default_rng(68)
        panel = generate(random_config(rng, max_units=80))
        frame = panel.to_dataframe()
        frame["X1"] = rng.normal(size=len(frame))
        p2 = load_panel(frame, x_cols=["X1"])
        from didiv import twfeiv

        split = covariate_split(p2)
        assert split.beta_iv_x == pytest.approx(twfeiv(panel).beta_iv, rel=1e-2)


class TestBetweenCells:
    def test_pair_contributions_recover_between_coefficient(self):
        rng = np.random.default_rng(69)
        for _ in range(3):
            panel = generate(covariate_config(rng))
            report = between_cells(panel)
            assert report.identity_residual < 1e-8 * max(1.0, abs(report.beta_between))
            assert report.weight_total == pytest.approx(1.0, abs=1e-8)

    def test_weighted_pair_values_sum(self):
        rng = np.random.default_rng(70)
        panel = generate(covariate_config(rng))
        report = between_cells(panel)
        total = sum(
            c.s_weight * c.beta_between
            for c in report.cells
            if c.beta_between is not None
        )
        assert total == pytest.approx(report.beta_between, rel=1e-8)
