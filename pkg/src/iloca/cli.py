"""Command-line surface: aggregate a table, impute a dataset, or rerun the
simulation studies.

Exit codes: 0 success, 2 malformed input, 3 invalid parameters,
4 degenerate data.  Every run writes a JSON report carrying a config echo
(seed included) sufficient to reproduce it.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .engine import CellStats, IlocaConfig, IMPUTATION, run_iloca
from .errors import (
    DegenerateDataError,
    IlocaError,
    InvalidParameterError,
    MalformedInputError,
)
from .imputation import atomic_table, build_imputation_cells, cell_mean_impute
from .reporting import (
    build_report,
    coloured_table_csv,
    dataset_csv_text,
    read_dataset_csv,
    read_table_csv,
    table_csv_text,
    write_report,
    write_text_atomic,
)
from .simgen import (
    run_clustering_study,
    run_simulation_study,
    simulation_setting,
)
from .table import altham_hack, altham_index, chi_square_independence, enumerate_log_odds

EXIT_MALFORMED = 2
EXIT_INVALID = 3
EXIT_DEGENERATE = 4


def _add_engine_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--min-cell-size", type=float, default=20.0)
    parser.add_argument("--max-steps", type=int, default=20)
    parser.add_argument("--k-proportion", type=float, default=0.05)
    parser.add_argument("--no-relaxation", action="store_true", help="keep the size threshold fixed")


def _engine_config(args, mode: str) -> IlocaConfig:
    config = IlocaConfig(
        min_cell_size=args.min_cell_size,
        max_steps=args.max_steps,
        k_proportion=args.k_proportion,
        mode=mode,
        relaxation=not args.no_relaxation,
    )
    config.validate()
    return config


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("ILOCA_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise InvalidParameterError(f"ILOCA_SEED is not an integer: {env!r}") from exc
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iloca", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    agg = sub.add_parser("aggregate", help="cluster a contingency table's small cells")
    agg.add_argument("table", help="CSV table of non-negative counts")
    _add_engine_flags(agg)
    agg.add_argument("--mode", choices=["frequency", "imputation"], default="frequency")
    agg.add_argument("--means", help="CSV grid of per-cell response means (imputation mode)")
    agg.add_argument("--sds", help="CSV grid of per-cell response standard deviations")
    agg.add_argument("--out", default=".", help="output directory")

    imp = sub.add_parser("impute", help="cell-mean impute a survey dataset")
    imp.add_argument("dataset", help="CSV dataset with columns id,y,r,z1c,z2c[,z1,z2,z3]")
    _add_engine_flags(imp)
    imp.add_argument("--mode", choices=["frequency", "imputation"], default="imputation")
    imp.add_argument("--rows", type=int, default=None, help="row classes (default: max label)")
    imp.add_argument("--cols", type=int, default=None, help="column classes (default: max label)")
    imp.add_argument("--out", default=".")

    sim = sub.add_parser("simulate", help="re-run a seeded simulation study")
    sim.add_argument("study", choices=["clustering", "imputation"])
    sim.add_argument("--law", choices=["uniform", "lognormal"], default="uniform")
    sim.add_argument("--rows", type=int, default=8)
    sim.add_argument("--cols", type=int, default=5)
    sim.add_argument("--dgp", type=int, choices=[1, 2], default=1)
    sim.add_argument("--response-model", type=int, choices=[1, 2], default=1)
    sim.add_argument("--rate", type=float, choices=[0.75, 0.50], default=0.75)
    sim.add_argument("--misspec", action="store_true")
    cal = sim.add_mutually_exclusive_group()
    cal.add_argument("--calibrate", dest="calibrate", action="store_true", default=None)
    cal.add_argument("--no-calibrate", dest="calibrate", action="store_false")
    sim.add_argument("--reps", type=int, default=100)
    sim.add_argument("--seed", type=int, default=None)
    _add_engine_flags(sim)
    sim.add_argument("--out", default=".")
    return parser


def _config_echo(args, seed=None) -> dict:
    echo = {k: v for k, v in vars(args).items() if k != "func"}
    if seed is not None:
        echo["seed"] = seed
    return echo


def cmd_aggregate(args) -> int:
    table = read_table_csv(args.table)
    config = _engine_config(args, args.mode)
    stats = None
    if args.mode == "imputation":
        if not args.means or not args.sds:
            raise InvalidParameterError("imputation mode needs --means and --sds grids")
        means = read_table_csv(args.means, allow_negative=True).values
        sds = read_table_csv(args.sds).values
        if means.shape != table.shape or sds.shape != table.shape:
            raise MalformedInputError("means/sds grids must match the table shape")
        counts = np.where(table.values > 0, table.values, 0)
        stats = CellStats.from_arrays(means, sds, counts)
    chi2 = chi_square_independence(table)
    original = altham_index(enumerate_log_odds(table))
    clusters, trace = run_iloca(table, config, stats)
    augmented = altham_hack(table, clusters)
    out = Path(args.out)
    report = build_report(
        command="aggregate",
        config=_config_echo(args),
        table=table,
        chi_square=chi2,
        altham_original=original,
        altham_augmented=augmented,
        clusters=clusters,
        trace=trace,
    )
    write_report(out / "report.json", report)
    write_text_atomic(out / "coloured.csv", coloured_table_csv(table, clusters))
    return 0


def cmd_impute(args) -> int:
    dataset = read_dataset_csv(args.dataset)
    config = _engine_config(args, args.mode)
    table = atomic_table(dataset, args.rows, args.cols)
    stats = None
    if config.mode == IMPUTATION:
        stats = CellStats.from_dataset(dataset, table.m, table.n)
    clusters, trace = run_iloca(table, config, stats)
    cells = build_imputation_cells(clusters, table)
    result = cell_mean_impute(dataset, cells)
    out = Path(args.out)
    report = build_report(
        command="impute",
        config=_config_echo(args),
        table=table,
        chi_square=None,
        clusters=clusters,
        trace=trace,
        estimator=result,
        extra={"imputation_cells": cells.n_cells},
    )
    write_report(out / "report.json", report)
    write_text_atomic(
        out / "imputed.csv", dataset_csv_text(dataset, w=result.w, cell_ids=cells.assign(dataset))
    )
    return 0


def _metrics_csv(metrics) -> str:
    lines = ["structure,rb_percent,rrmse_percent"]
    for name in metrics.rb:
        lines.append(f"{name},{metrics.rb[name]:.6g},{metrics.rrmse[name]:.6g}")
    return "\n".join(lines) + "\n"


def _estimates_csv(metrics) -> str:
    names = list(metrics.estimates)
    lines = ["replicate,actual," + ",".join(names)]
    for k in range(metrics.replicates):
        row = [str(k), repr(float(metrics.truths[k]))]
        row += [repr(float(metrics.estimates[name][k])) for name in names]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _altham_csv(report) -> str:
    lines = ["replicate,original,aggregated"]
    for k in range(report.replicates):
        lines.append(
            f"{k},{report.altham_original[k]:.10g},{report.altham_aggregated[k]:.10g}"
        )
    return "\n".join(lines) + "\n"


def _colours_csv(report) -> str:
    lines = ["colour,mean_members,present_in_replicates"]
    for colour, mean in report.colour_member_means.items():
        lines.append(f"{colour},{mean:.6g},{report.colour_present_counts[colour]}")
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    seed = _resolve_seed(args)
    if args.reps < 1:
        raise InvalidParameterError("--reps must be at least 1")
    out = Path(args.out)
    if args.study == "clustering":
        config = _engine_config(args, "frequency")
        report = run_clustering_study(args.law, args.rows, args.cols, args.reps, seed, config=config)
        doc = build_report(command="simulate", config=_config_echo(args, seed), clustering=report)
        write_report(out / "report.json", doc)
        write_text_atomic(out / "altham.csv", _altham_csv(report))
        write_text_atomic(out / "colour_averages.csv", _colours_csv(report))
        return 0
    config = _engine_config(args, IMPUTATION)
    setting = simulation_setting(
        args.dgp, args.response_model, args.rate, misspec=args.misspec, calibrate=args.calibrate
    )
    setting = replace(setting, engine=config)
    metrics = run_simulation_study(setting, args.reps, seed)
    doc = build_report(command="simulate", config=_config_echo(args, seed), metrics=metrics)
    write_report(out / "report.json", doc)
    write_text_atomic(out / "metrics.csv", _metrics_csv(metrics))
    write_text_atomic(out / "estimates.csv", _estimates_csv(metrics))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"aggregate": cmd_aggregate, "impute": cmd_impute, "simulate": cmd_simulate}
    try:
        return handlers[args.command](args)
    except MalformedInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except InvalidParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DegenerateDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except IlocaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
