import json

import numpy as np
import pandas as pd
import pytest

from didiv import decompose, generate, load_panel, preset
from didiv.cli import main

from conftest import small_panel_frame


def run_cli(args):
    return main(list(args))


class TestDecomposeCommand:
    def test_outputs_and_round_trip(self, tmp_path):
        sim_dir = tmp_path / "sim"
        assert run_cli(["simulate", "--preset", "figure1", "--out", str(sim_dir)]) == 0
        dec_dir = tmp_path / "dec"
        assert (
            run_cli(
                ["decompose", "--input", str(sim_dir / "panel.csv"), "--out", str(dec_dir)]
            )
            == 0
        )
        payload = json.loads((dec_dir / "decomposition.json").read_text())
        assert payload["schema_version"] == "1.0"
        assert "weak_threshold" in payload["thresholds"]

        # round trip: file-based pipeline equals the in-memory one
        in_memory = decompose(generate(preset("figure1")))
        assert abs(payload["beta_iv"] - in_memory.beta_iv) < 1e-12

        components = pd.read_csv(dec_dir / "components.csv")
        assert len(components) == len(in_memory.components)
        np.testing.assert_allclose(
            components["iv_weight"].to_numpy(),
            [c.iv_weight for c in in_memory.components],
            atol=1e-12,
        )
        summary = pd.read_csv(dec_dir / "summary.csv")
        assert set(summary.columns) == {
            "kind",
            "count",
            "total_weight",
            "total_wald_did",
            "weighted_wald_did",
        }
        assert summary["weighted_wald_did"].sum() == pytest.approx(
            in_memory.beta_iv, abs=1e-9
        )

    def test_not_staggered_exit_code_and_payload(self, tmp_path, capsys):
        frame = small_panel_frame()
        frame.loc[(frame["unit"] == "a") & (frame["time"] == 4), "Z"] = 0.0
        path = tmp_path / "bad.csv"
        frame.to_csv(path, index=False)
        status = run_cli(["decompose", "--input", str(path), "--out", str(tmp_path)])
        assert status == 1
        record = json.loads(capsys.readouterr().err.strip())
        assert record["error"] == "NOT_STAGGERED"
        assert record["unit"] == "a"
        assert record["period"] == 4

    def test_svg_is_byte_deterministic(self, tmp_path):
        sim_dir = tmp_path / "sim"
        run_cli(["simulate", "--preset", "negative-weight", "--out", str(sim_dir)])
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            run_cli(["decompose", "--input", str(sim_dir / "panel.csv"), "--out", str(out)])
        assert (out_a / "scatter.svg").read_bytes() == (out_b / "scatter.svg").read_bytes()

    def test_negative_weight_row_in_components(self, tmp_path):
        run_cli(["simulate", "--preset", "negative-weight", "--out", str(tmp_path), "--decompose"])
        components = pd.read_csv(tmp_path / "components.csv")
        assert (components["iv_weight"] < 0).any()

    def test_unbalanced_report_emitted(self, tmp_path):
        sim_dir = tmp_path / "sim"
        run_cli(["simulate", "--preset", "lemma3-stable", "--out", str(sim_dir)])
        out = tmp_path / "dec"
        run_cli(
            [
                "decompose",
                "--input",
                str(sim_dir / "panel.csv"),
                "--out",
                str(out),
                "--control",
                "never",
            ]
        )
        payload = json.loads((out / "unbalanced_weights.json").read_text())
        assert payload["weight_total"] == pytest.approx(1.0, abs=1e-8)


class TestCompareCommand:
    def test_covariate_comparison_identity(self, tmp_path):
        sim_dir = tmp_path / "sim"
        run_cli(["simulate", "--preset", "covariates", "--out", str(sim_dir)])
        out = tmp_path / "cmp"
        status = run_cli(
            [
                "compare",
                "--input",
                str(sim_dir / "panel.csv"),
                "--x-cols",
                "X1,X2",
                "--alt",
                "covariates",
                "--out",
                str(out),
            ]
        )
        assert status == 0
        payload = json.loads((out / "comparison.json").read_text())
        terms = (
            payload["term_walddids"]
            + payload["term_weights"]
            + payload["term_interaction"]
            + payload["term_within"]
        )
        diff = payload["difference"]
        assert terms == pytest.approx(diff, abs=1e-10 * max(1.0, abs(diff)))
        paired = pd.read_csv(out / "paired.csv")
        assert not paired.empty

    def test_weighted_comparison(self, tmp_path):
        sim_dir = tmp_path / "sim"
        run_cli(["simulate", "--preset", "lemma3-stable", "--out", str(sim_dir)])
        frame = pd.read_csv(sim_dir / "panel.csv")
        rng = np.random.default_rng(5)
        units = frame["unit"].unique()
        w = dict(zip(units, rng.uniform(0.5, 2.0, len(units))))
        frame["weight"] = frame["unit"].map(w)
        path = sim_dir / "weighted.csv"
        frame.to_csv(path, index=False)
        out = tmp_path / "cmp"
        status = run_cli(
            [
                "compare",
                "--input",
                str(path),
                "--weight-col",
                "weight",
                "--alt",
                "weighted",
                "--out",
                str(out),
            ]
        )
        assert status == 0
        payload = json.loads((out / "comparison.json").read_text())
        terms = (
            payload["term_walddids"]
            + payload["term_weights"]
            + payload["term_interaction"]
            + payload["term_within"]
        )
        assert terms == pytest.approx(
            payload["difference"], abs=1e-10 * max(1.0, abs(payload["difference"]))
        )


class TestSimulateAndOracle:
    def test_simulate_row_count(self, tmp_path):
        run_cli(["simulate", "--preset", "figure1", "--out", str(tmp_path)])
        frame = pd.read_csv(tmp_path / "panel.csv")
        assert len(frame) == 300 * 100

    def test_oracle_json(self, tmp_path):
        run_cli(["oracle", "--preset", "lemma3-stable", "--out", str(tmp_path)])
        payload = json.loads((tmp_path / "oracle.json").read_text())
        assert payload["delta_clatt"] == pytest.approx(0.0, abs=1e-12)
        assert payload["stable_schedules"] is True

    def test_oracle_with_reps_writes_mc_report(self, tmp_path):
        status = run_cli(
            ["oracle", "--preset", "lemma3-stable", "--reps", "3", "--out", str(tmp_path)]
        )
        assert status == 0
        report = json.loads((tmp_path / "mc_report.json").read_text())
        assert report["n_replications"] == 3
        assert np.isfinite(report["mean"])

    def test_seed_override_changes_draw(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_cli(["simulate", "--preset", "lemma3-stable", "--out", str(a)])
        run_cli(["simulate", "--preset", "lemma3-stable", "--seed", "99", "--out", str(b)])
        fa = pd.read_csv(a / "panel.csv")
        fb = pd.read_csv(b / "panel.csv")
        assert not np.allclose(fa["Y"], fb["Y"])

    def test_toml_config(self, tmp_path):
        config = tmp_path / "dgp.toml"
        config.write_text(
            "\n".join(
                [
                    "T = 6",
                    "cohorts = [[2, 20], [4, 20], [0, 20]]",
                    "mode = \"gaussian\"",
                    "seed = 3",
                    "[caet_schedule]",
                    "2 = 0.4",
                    "4 = [0.3, 0.3, 0.2]",
                    "[clatt_schedule]",
                    "2 = 1.5",
                    "4 = 1.0",
                ]
            )
        )
        out = tmp_path / "sim"
        assert run_cli(["simulate", "--config", str(config), "--out", str(out)]) == 0
        frame = pd.read_csv(out / "panel.csv")
        assert len(frame) == 60 * 6

    def test_csv_uses_full_precision(self, tmp_path):
        run_cli(["simulate", "--preset", "lemma3-stable", "--out", str(tmp_path)])
        panel_a = load_panel(
            pd.read_csv(tmp_path / "panel.csv", float_precision="round_trip")
        )
        panel_b = generate(preset("lemma3-stable"))
        np.testing.assert_array_equal(panel_a.y, panel_b.y)
