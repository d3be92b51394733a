"""File formats and the machine-readable run report.

Tables travel as CSV grids with an optional header row and label column,
both auto-detected by a non-numeric first cell.  Datasets travel as CSV
with named columns (id, y, r, z1c, z2c and optional z1, z2, z3); an empty y
field marks a missing response.  Reports are single JSON documents; CSV
output uses six significant digits, the JSON report keeps full precision.
All file writes are whole-file atomic (write then rename).
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .engine import AggregationTrace, ClusterMap, StepRecord
from .errors import MalformedInputError
from .imputation import EstimatorResult, SurveyDataset
from .simgen import ClusteringStudyReport, MetricsReport
from .table import AlthamSummary, ContingencyTable

__all__ = [
    "format_number",
    "write_text_atomic",
    "read_table_csv",
    "write_table_csv",
    "read_dataset_csv",
    "write_dataset_csv",
    "coloured_values",
    "coloured_table_csv",
    "build_report",
    "write_report",
]


def format_number(x: float) -> str:
    """Six significant digits; integer-valued cells print without a point."""
    value = float(x)
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return f"{value:.6g}"


def write_text_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def read_table_csv(path, allow_negative: bool = False) -> ContingencyTable:
    """Parse a CSV grid into a contingency table.

    A non-numeric cell in the first row marks a header row; after removing
    it, a non-numeric first cell in any row marks a label column.  Raises
    :class:`MalformedInputError` on ragged rows or non-numeric body cells.
    """
    with open(path, newline="") as handle:
        rows = [row for row in csv.reader(handle) if row]
    if not rows:
        raise MalformedInputError(f"{path}: empty table file")
    if any(not _is_number(cell.strip()) for cell in rows[0]):
        rows = rows[1:]
        if not rows:
            raise MalformedInputError(f"{path}: table file holds only a header")
    if any(not _is_number(row[0].strip()) for row in rows):
        rows = [row[1:] for row in rows]
    widths = {len(row) for row in rows}
    if len(widths) != 1:
        raise MalformedInputError(
            f"{path}: ragged table, row lengths {sorted(widths)} across {len(rows)} rows"
        )
    if 0 in widths:
        raise MalformedInputError(f"{path}: table has no data columns")
    grid = []
    for r, row in enumerate(rows):
        out = []
        for c, cell in enumerate(row):
            token = cell.strip()
            if not _is_number(token):
                raise MalformedInputError(f"{path}: non-numeric cell at row {r + 1}, column {c + 1}")
            value = float(token)
            if value < 0 and not allow_negative:
                raise MalformedInputError(f"{path}: negative count at row {r + 1}, column {c + 1}")
            out.append(value)
        grid.append(out)
    try:
        return ContingencyTable(grid)
    except Exception as exc:
        raise MalformedInputError(f"{path}: {exc}") from exc


def table_csv_text(values: np.ndarray) -> str:
    lines = [",".join(format_number(v) for v in row) for row in np.asarray(values, dtype=float)]
    return "\n".join(lines) + "\n"


def write_table_csv(path, values: np.ndarray) -> None:
    write_text_atomic(Path(path), table_csv_text(values))


def coloured_values(table: ContingencyTable, clusters: ClusterMap) -> np.ndarray:
    """Grid with assigned cells showing their negative cluster label and
    untouched cells showing their original count."""
    labels = clusters.labels()
    return np.where(labels < 0, labels, table.values)


def coloured_table_csv(table: ContingencyTable, clusters: ClusterMap) -> str:
    return table_csv_text(coloured_values(table, clusters))


DATASET_COLUMNS = ("id", "y", "r", "z1c", "z2c")
OPTIONAL_COLUMNS = ("z1", "z2", "z3")


def read_dataset_csv(path) -> SurveyDataset:
    """Parse a survey dataset CSV into arrays.

    Required columns: id, y (empty = missing), r, z1c, z2c.  Optional: z1,
    z2, z3.  Validation failures raise :class:`MalformedInputError`.
    """
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise MalformedInputError(f"{path}: empty dataset file")
        names = [name.strip() for name in reader.fieldnames]
        missing = [col for col in DATASET_COLUMNS if col not in names]
        if missing:
            raise MalformedInputError(f"{path}: missing required columns {missing}")
        rows = list(reader)
    if not rows:
        raise MalformedInputError(f"{path}: dataset has no records")

    def column(name: str) -> list[str]:
        return [(row.get(name) or "").strip() for row in rows]

    def floats(name: str, allow_empty: bool = False) -> np.ndarray:
        out = []
        for i, token in enumerate(column(name)):
            if token == "" and allow_empty:
                out.append(float("nan"))
                continue
            if not _is_number(token):
                raise MalformedInputError(f"{path}: bad value for {name} at record {i + 1}")
            out.append(float(token))
        return np.asarray(out)

    def ints(name: str) -> np.ndarray:
        vals = floats(name)
        if not np.array_equal(vals, np.round(vals)):
            raise MalformedInputError(f"{path}: column {name} must be integer valued")
        return vals.astype(int)

    optional = {}
    for name in OPTIONAL_COLUMNS:
        optional[name] = floats(name, allow_empty=True) if name in names else None
        if optional[name] is not None and not np.isfinite(optional[name]).all():
            optional[name] = None
    try:
        return SurveyDataset(
            ids=ints("id"),
            y=floats("y", allow_empty=True),
            r=ints("r"),
            z1c=ints("z1c"),
            z2c=ints("z2c"),
            z1=optional["z1"],
            z2=optional["z2"],
            z3=optional["z3"],
        )
    except Exception as exc:
        raise MalformedInputError(f"{path}: {exc}") from exc


def dataset_csv_text(
    dataset: SurveyDataset,
    w: Optional[np.ndarray] = None,
    cell_ids: Optional[np.ndarray] = None,
) -> str:
    """Serialize a dataset, optionally with the completed working variable
    and per-record imputation-cell id appended."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    header = list(DATASET_COLUMNS)
    for name in OPTIONAL_COLUMNS:
        if getattr(dataset, name) is not None:
            header.append(name)
    if w is not None:
        header.append("w")
    if cell_ids is not None:
        header.append("cell")
    writer.writerow(header)
    for idx in range(dataset.n):
        row = [
            str(int(dataset.ids[idx])),
            "" if not np.isfinite(dataset.y[idx]) else format_number(dataset.y[idx]),
            str(int(dataset.r[idx])),
            str(int(dataset.z1c[idx])),
            str(int(dataset.z2c[idx])),
        ]
        for name in OPTIONAL_COLUMNS:
            col = getattr(dataset, name)
            if col is not None:
                row.append(format_number(col[idx]))
        if w is not None:
            row.append(format_number(w[idx]))
        if cell_ids is not None:
            row.append(str(int(cell_ids[idx])))
        writer.writerow(row)
    return buffer.getvalue()


def write_dataset_csv(path, dataset: SurveyDataset, w=None, cell_ids=None) -> None:
    write_text_atomic(Path(path), dataset_csv_text(dataset, w, cell_ids))


def _positions(cells) -> list[list[int]]:
    # 1-based row/col pairs in the report, matching table conventions.
    return [[int(r) + 1, int(c) + 1] for r, c in cells]


def _cluster_entries(clusters: ClusterMap) -> list[dict]:
    return [
        {
            "label": cluster.label,
            "member_count": len(cluster.members),
            "total": cluster.total,
            "members": _positions(cluster.members),
            "undersized": cluster.undersized,
            "straggler": cluster.straggler,
        }
        for cluster in clusters.clusters
    ]


def _step_entry(step: StepRecord) -> dict:
    entry = {
        "step": step.step,
        "threshold": step.threshold,
        "generator_cell": _positions([step.generator_cell])[0],
        "generator_value": step.generator_value,
        "pool_size": step.pool_size,
        "assigned": [[_positions([pos])[0], value] for pos, value in step.assigned],
        "closing_reason": step.closing_reason,
        "straggler": step.straggler,
    }
    if step.generator is not None:
        entry["generator_ratio"] = {
            "rows": [step.generator.i + 1, step.generator.k + 1],
            "cols": [step.generator.j + 1, step.generator.l + 1],
            "cells": list(step.generator.cells),
            "odds": step.generator.odds,
            "log_odds": step.generator.log_odds,
        }
    return entry


def altham_entry(summary: AlthamSummary) -> dict:
    return {"total": summary.total, "count": summary.count, "mean": summary.mean}


def build_report(
    command: str,
    config: dict,
    table: Optional[ContingencyTable] = None,
    chi_square: Optional[tuple[float, int, float]] = None,
    altham_original: Optional[AlthamSummary] = None,
    altham_augmented: Optional[AlthamSummary] = None,
    clusters: Optional[ClusterMap] = None,
    trace: Optional[AggregationTrace] = None,
    estimator: Optional[EstimatorResult] = None,
    metrics: Optional[MetricsReport] = None,
    clustering: Optional[ClusteringStudyReport] = None,
    extra: Optional[dict] = None,
) -> dict:
    """Assemble the JSON-serializable run report document."""
    report: dict = {"command": command, "config": config}
    if table is not None:
        report["table"] = {"rows": table.m, "cols": table.n, "total": table.total}
    if chi_square is not None:
        stat, dof, p_value = chi_square
        report["chi_square"] = {"statistic": stat, "dof": dof, "p_value": p_value}
    if altham_original is not None:
        block = {"original": altham_entry(altham_original)}
        if altham_augmented is not None:
            block["augmented"] = altham_entry(altham_augmented)
            if altham_original.total > 0:
                block["retention_ratio"] = altham_augmented.total / altham_original.total
        report["altham"] = block
    if clusters is not None:
        report["clusters"] = _cluster_entries(clusters)
        report["untouched"] = _positions(clusters.untouched)
        report["empty"] = _positions(clusters.empty)
        report["flagged_singletons"] = _positions(clusters.flagged_singletons)
        if table is not None:
            report["coloured_table"] = [list(row) for row in coloured_values(table, clusters)]
    if trace is not None:
        report["trace"] = {
            "stop_reason": trace.stop_reason,
            "steps": [_step_entry(s) for s in trace.steps],
            "straggler_steps": [_step_entry(s) for s in trace.straggler_steps],
        }
    if estimator is not None:
        report["estimator"] = {
            "imputed_mean": estimator.imputed_mean,
            "true_mean": estimator.true_mean if np.isfinite(estimator.true_mean) else None,
            "fallback_cells": estimator.fallback_cells,
            "cell_sizes": None if estimator.cell_sizes is None else [float(x) for x in estimator.cell_sizes],
            "cell_means": None
            if estimator.cell_means is None
            else [None if not np.isfinite(x) else float(x) for x in estimator.cell_means],
        }
    if metrics is not None:
        report["metrics"] = {
            "replicates": metrics.replicates,
            "mean_iloca_cells": metrics.mean_iloca_cells,
            "mean_realized_rate": metrics.mean_realized_rate,
            "rb": metrics.rb,
            "rrmse": metrics.rrmse,
            "fallback_cells": metrics.fallback_cells,
        }
    if clustering is not None:
        report["clustering"] = {
            "column_law": clustering.column_law,
            "rows": clustering.rows,
            "cols": clustering.cols,
            "replicates": clustering.replicates,
            "chi2_pass_count": clustering.chi2_pass_count,
            "mean_cluster_count": clustering.mean_cluster_count,
            "colour_member_means": {str(k): v for k, v in clustering.colour_member_means.items()},
            "colour_present_counts": {str(k): v for k, v in clustering.colour_present_counts.items()},
            "retention_mean": clustering.retention_mean,
            "retention_of_means": clustering.retention_of_means,
            "dominant_column_untouched": clustering.dominant_column_untouched,
        }
    if extra:
        report.update(extra)
    return report


def write_report(path, report: dict) -> None:
    write_text_atomic(Path(path), json.dumps(report, indent=2, allow_nan=True) + "\n")
