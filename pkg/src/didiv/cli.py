"""Command-line interface.

Four subcommands: decompose (Wald-DID decomposition of a CSV panel), compare
(Oaxaca-style specification comparison), simulate (draw a panel from a DGP
preset or config file), and oracle (population estimand and weights, with an
optional Monte Carlo report). Errors surface as structured JSON on stderr;
exit status 2 flags runs that completed with weak-cell diagnostics.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import pandas as pd

from . import __version__
from .comparison import (
    component_vectors,
    covariate_vectors,
    oaxaca,
    pair_vectors,
)
from .decomposition import decompose, unbalanced_weights
from .errors import DidivError
from .panel import load_panel
from .plots import comparison_scatter, decomposition_scatter
from .simulation import PRESETS, config_from_toml, generate, monte_carlo, oracle_estimand, preset

SCHEMA_VERSION = "1.0"


def _sig(x) -> str:
    """Full-precision decimal rendering for CSV round-trips."""
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _write_csv(path: Path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_sig(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, payload: dict, thresholds: dict):
    payload = dict(payload)
    payload["schema_version"] = SCHEMA_VERSION
    payload["thresholds"] = thresholds
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load(args):
    frame = pd.read_csv(args.input, float_precision="round_trip")
    x_cols = args.x_cols.split(",") if args.x_cols else None
    return load_panel(
        frame,
        unit_col=args.unit_col,
        time_col=args.time_col,
        y_col=args.y_col,
        d_col=args.d_col,
        z_col=args.z_col,
        x_cols=x_cols,
        weight_col=args.weight_col,
    )


def _formats(args):
    return set(args.formats.split(","))


def _add_schema_flags(p):
    p.add_argument("--input", required=True, help="long-format CSV panel")
    p.add_argument("--unit-col", default="unit")
    p.add_argument("--time-col", default="time")
    p.add_argument("--y-col", default="Y")
    p.add_argument("--d-col", default="D")
    p.add_argument("--z-col", default="Z")
    p.add_argument("--x-cols", default=None, help="comma-separated covariate columns")
    p.add_argument("--weight-col", default=None)


def _add_common_flags(p):
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--formats", default="json,csv,svg")
    p.add_argument("--weak-threshold", type=float, default=None)


COMPONENT_COLUMNS = (
    "cell_id",
    "kind",
    "treated",
    "control",
    "window_base",
    "window_shift",
    "did_outcome",
    "did_treatment",
    "variance",
    "share_sq",
    "fs_weight",
    "iv_weight",
    "wald_did",
    "contribution",
)


def _emit_decomposition(result, out: Path, formats, thresholds):
    if "json" in formats:
        _write_json(out / "decomposition.json", result.as_dict(), thresholds)
    if "csv" in formats:
        rows = [[c.as_dict()[k] for k in COMPONENT_COLUMNS] for c in result.components]
        _write_csv(out / "components.csv", COMPONENT_COLUMNS, rows)
        summary_rows = [
            [kind.label(), t["count"], t["total_weight"], t["total_wald_did"], t["weighted_wald_did"]]
            for kind, t in result.kind_totals.items()
        ]
        _write_csv(
            out / "summary.csv",
            ("kind", "count", "total_weight", "total_wald_did", "weighted_wald_did"),
            summary_rows,
        )
    if "svg" in formats:
        (out / "scatter.svg").write_text(decomposition_scatter(result))


def cmd_decompose(args) -> int:
    panel = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = decompose(
        panel,
        weighted=args.weight_col is not None,
        weak_threshold=args.weak_threshold,
    )
    thresholds = {"weak_threshold": result.weak_threshold}
    _emit_decomposition(result, out, _formats(args), thresholds)
    if args.control is not None:
        report = unbalanced_weights(panel, control=args.control)
        if "json" in _formats(args):
            _write_json(out / "unbalanced_weights.json", report.as_dict(), thresholds)
    return 2 if result.n_weak > 0 else 0


def cmd_compare(args) -> int:
    panel = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    formats = _formats(args)

    base_result = decompose(panel, weighted=False, weak_threshold=args.weak_threshold)
    thresholds = {"weak_threshold": base_result.weak_threshold}
    if args.alt == "weighted":
        alt_result = decompose(panel, weighted=True, weak_threshold=args.weak_threshold)
        comparison = oaxaca(component_vectors(base_result), component_vectors(alt_result))
        weak = base_result.n_weak + alt_result.n_weak
    else:
        alt_vec, within_term, split = covariate_vectors(panel, weak_threshold=args.weak_threshold)
        comparison = oaxaca(
            pair_vectors(base_result),
            alt_vec,
            within_term=within_term,
            within_term_note="omega * within IV coefficient of the covariate split",
        )
        weak = base_result.n_weak

    if "json" in formats:
        _write_json(out / "comparison.json", comparison.as_dict(), thresholds)
    if "csv" in formats:
        header = ("cell_id", "base_weight", "alt_weight", "base_value", "alt_value")
        rows = [
            [p.cell_id, p.base_weight, p.alt_weight, p.base_value, p.alt_value]
            for p in comparison.paired_components
        ]
        _write_csv(out / "paired.csv", header, rows)
    if "svg" in formats:
        weights_svg = comparison_scatter(
            comparison.paired_components, title="Component weights", value_axis=False
        )
        values_svg = comparison_scatter(
            comparison.paired_components, title="Component Wald-DIDs", value_axis=True
        )
        (out / "scatter45.svg").write_text(weights_svg + values_svg)
    return 2 if weak > 0 else 0


def _dgp_config(args):
    if args.preset is not None:
        config = preset(args.preset)
    elif args.config is not None:
        config = config_from_toml(args.config)
    else:
        raise SystemExit("one of --preset or --config is required")
    if args.seed is not None:
        from dataclasses import replace

        config = replace(config, seed=args.seed)
    return config


def cmd_simulate(args) -> int:
    config = _dgp_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    panel = generate(config)
    frame = panel.to_dataframe()
    header = list(frame.columns)
    _write_csv(out / "panel.csv", header, frame.itertuples(index=False, name=None))
    status = 0
    if args.decompose:
        result = decompose(panel, weak_threshold=args.weak_threshold)
        thresholds = {"weak_threshold": result.weak_threshold}
        _emit_decomposition(result, out, _formats(args), thresholds)
        status = 2 if result.n_weak > 0 else 0
    return status


def cmd_oracle(args) -> int:
    config = _dgp_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    oracle = oracle_estimand(config)
    _write_json(out / "oracle.json", oracle.as_dict(), {})
    if args.reps:
        summary = monte_carlo(config, args.reps)
        _write_json(out / "mc_report.json", summary.as_dict(), {})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="didiv",
        description="TWFEIV estimation and exact Wald-DID decomposition",
    )
    parser.add_argument("--version", action="version", version=f"didiv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_dec = sub.add_parser("decompose", help="decompose a TWFEIV estimate")
    _add_schema_flags(p_dec)
    _add_common_flags(p_dec)
    p_dec.add_argument(
        "--control",
        choices=("never", "last"),
        default=None,
        help="also emit per-cohort-period weights with this control cohort",
    )
    p_dec.set_defaults(func=cmd_decompose)

    p_cmp = sub.add_parser("compare", help="compare two specifications")
    _add_schema_flags(p_cmp)
    _add_common_flags(p_cmp)
    p_cmp.add_argument("--alt", choices=("weighted", "covariates"), required=True)
    p_cmp.set_defaults(func=cmd_compare)

    p_sim = sub.add_parser("simulate", help="draw a synthetic panel")
    p_sim.add_argument("--preset", choices=PRESETS, default=None)
    p_sim.add_argument("--config", default=None, help="DGP config TOML file")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--decompose", action="store_true")
    _add_common_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_orc = sub.add_parser("oracle", help="population estimand and weights")
    p_orc.add_argument("--preset", choices=PRESETS, default=None)
    p_orc.add_argument("--config", default=None, help="DGP config TOML file")
    p_orc.add_argument("--seed", type=int, default=None)
    p_orc.add_argument("--reps", type=int, default=0)
    p_orc.add_argument("--out", default=".")
    p_orc.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DidivError as exc:
        record = {"error": exc.code, "message": str(exc)}
        record.update(exc.payload())
        sys.stderr.write(json.dumps(record) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
