"""File formats, report documents and the command-line contract."""

from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from iloca import MalformedInputError
from iloca.cli import main
from iloca.reporting import (
    coloured_table_csv,
    dataset_csv_text,
    format_number,
    read_dataset_csv,
    read_table_csv,
    table_csv_text,
    write_text_atomic,
)


def write(path, text):
    path.write_text(text)
    return str(path)


class TestTableFiles:
    def test_plain_grid(self, tmp_path):
        path = write(tmp_path / "t.csv", "1,2\n3,4\n")
        table = read_table_csv(path)
        assert np.array_equal(table.values, [[1, 2], [3, 4]])

    def test_header_and_label_column_detected(self, tmp_path):
        path = write(tmp_path / "t.csv", "region,a,b\nnorth,1,2\nsouth,3,4\n")
        table = read_table_csv(path)
        assert np.array_equal(table.values, [[1, 2], [3, 4]])

    def test_header_only(self, tmp_path):
        path = write(tmp_path / "t.csv", "a,b\n1,2\n3,4\n")
        assert np.array_equal(read_table_csv(path).values, [[1, 2], [3, 4]])

    def test_ragged_rejected(self, tmp_path):
        path = write(tmp_path / "t.csv", "1,2\n3\n")
        with pytest.raises(MalformedInputError):
            read_table_csv(path)

    def test_negative_rejected_unless_allowed(self, tmp_path):
        path = write(tmp_path / "t.csv", "1,-2\n3,4\n")
        with pytest.raises(MalformedInputError):
            read_table_csv(path)
        table = read_table_csv(path, allow_negative=True)
        assert table.values[0, 1] == -2

    def test_six_significant_digit_format(self):
        assert format_number(12.0) == "12"
        assert format_number(-3.0) == "-3"
        assert format_number(19.047619047619047) == "19.0476"
        assert format_number(3.5) == "3.5"

    def test_serialization_round_trip(self, tmp_path):
        values = np.array([[12.0, -3.0, 19.047619], [0.0, 3.5, 42.0]])
        text = table_csv_text(values)
        path = write(tmp_path / "t.csv", text)
        back = read_table_csv(path, allow_negative=True)
        assert table_csv_text(back.values) == text


class TestDatasetFiles:
    def test_round_trip(self, tmp_path):
        text = (
            "id,y,r,z1c,z2c,z1,z2\n"
            "1,0.5,1,1,2,1,2\n"
            "2,,0,2,1,2,1\n"
        )
        path = write(tmp_path / "d.csv", text)
        ds = read_dataset_csv(path)
        assert ds.n == 2
        assert np.isnan(ds.y[1])
        assert ds.r.tolist() == [1, 0]
        out = dataset_csv_text(ds)
        back = read_dataset_csv(write(tmp_path / "d2.csv", out))
        assert np.array_equal(back.r, ds.r)
        assert np.array_equal(back.z1c, ds.z1c)

    def test_missing_column_rejected(self, tmp_path):
        path = write(tmp_path / "d.csv", "id,y,r,z1c\n1,0.5,1,1\n")
        with pytest.raises(MalformedInputError):
            read_dataset_csv(path)

    def test_respondent_without_y_rejected(self, tmp_path):
        path = write(tmp_path / "d.csv", "id,y,r,z1c,z2c\n1,,1,1,1\n")
        with pytest.raises(MalformedInputError):
            read_dataset_csv(path)


def run_cli(args):
    return main([str(a) for a in args])


class TestAggregateCommand:
    def test_large_cells_untouched(self, tmp_path):
        table = np.full((4, 4), 50.0)
        src = tmp_path / "table.csv"
        write_text_atomic(src, table_csv_text(table))
        out = tmp_path / "out"
        assert run_cli(["aggregate", src, "--out", out]) == 0
        assert (out / "coloured.csv").read_text() == src.read_text()
        report = json.loads((out / "report.json").read_text())
        assert report["clusters"] == []
        assert report["chi_square"]["dof"] == 9

    def test_coloured_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        grid = rng.integers(1, 30, size=(6, 5)).astype(float)
        src = tmp_path / "table.csv"
        write_text_atomic(src, table_csv_text(grid))
        out = tmp_path / "out"
        assert run_cli(["aggregate", src, "--out", out]) == 0
        coloured = out / "coloured.csv"
        text = coloured.read_text()
        back = read_table_csv(coloured, allow_negative=True)
        assert table_csv_text(back.values) == text

    def test_nonrectangular_exits_2(self, tmp_path, capsys):
        src = write(tmp_path / "bad.csv", "1,2\n3\n")
        assert run_cli(["aggregate", src]) == 2
        assert "error:" in capsys.readouterr().err

    def test_invalid_parameter_exits_3(self, tmp_path):
        src = tmp_path / "t.csv"
        write_text_atomic(src, table_csv_text(np.full((3, 3), 30.0)))
        assert run_cli(["aggregate", src, "--k-proportion", "0"]) == 3

    def test_missing_file_exits_2(self, tmp_path):
        assert run_cli(["aggregate", tmp_path / "absent.csv"]) == 2

    def test_imputation_mode_with_stat_grids(self, tmp_path):
        rng = np.random.default_rng(1)
        grid = rng.integers(5, 15, size=(4, 4)).astype(float)
        src = tmp_path / "t.csv"
        write_text_atomic(src, table_csv_text(grid))
        means = tmp_path / "m.csv"
        write_text_atomic(means, table_csv_text(rng.random((4, 4))))
        sds = tmp_path / "s.csv"
        write_text_atomic(sds, table_csv_text(rng.random((4, 4))))
        out = tmp_path / "out"
        code = run_cli([
            "aggregate", src, "--mode", "imputation",
            "--means", means, "--sds", sds, "--out", out,
        ])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["mode"] == "imputation"

    def test_imputation_mode_without_stats_exits_3(self, tmp_path):
        src = tmp_path / "t.csv"
        write_text_atomic(src, table_csv_text(np.full((3, 3), 10.0)))
        assert run_cli(["aggregate", src, "--mode", "imputation"]) == 3


def dataset_text(n, all_respond=True, seed=0):
    rng = np.random.default_rng(seed)
    rows = ["id,y,r,z1c,z2c"]
    for i in range(1, n + 1):
        r = 1 if all_respond or rng.random() < 0.7 else 0
        y = f"{rng.random():.6g}" if r else ""
        rows.append(f"{i},{y},{r},{rng.integers(1, 4)},{rng.integers(1, 4)}")
    return "\n".join(rows) + "\n"


class TestImputeCommand:
    def test_full_response_w_equals_y_bytes(self, tmp_path):
        src = write(tmp_path / "d.csv", dataset_text(60, all_respond=True))
        out = tmp_path / "out"
        assert run_cli(["impute", src, "--out", out]) == 0
        with open(out / "imputed.csv", newline="") as handle:
            rows = list(csv.DictReader(handle))
        assert all(row["w"] == row["y"] for row in rows)
        report = json.loads((out / "report.json").read_text())
        assert report["estimator"]["imputed_mean"] == pytest.approx(report["estimator"]["true_mean"])

    def test_missing_values_filled(self, tmp_path):
        src = write(tmp_path / "d.csv", dataset_text(120, all_respond=False, seed=3))
        out = tmp_path / "out"
        assert run_cli(["impute", src, "--out", out]) == 0
        with open(out / "imputed.csv", newline="") as handle:
            rows = list(csv.DictReader(handle))
        assert all(row["w"] != "" for row in rows)
        assert any(row["y"] == "" for row in rows)

    def test_zero_respondents_exits_4(self, tmp_path):
        text = "id,y,r,z1c,z2c\n1,,0,1,1\n2,,0,1,2\n3,,0,2,1\n4,,0,2,2\n"
        src = write(tmp_path / "d.csv", text)
        assert run_cli(["impute", src]) == 4


class TestSimulateCommand:
    def test_clustering_outputs(self, tmp_path):
        out = tmp_path / "out"
        code = run_cli([
            "simulate", "clustering", "--law", "uniform", "--reps", "3",
            "--seed", "5", "--out", out,
        ])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["clustering"]["replicates"] == 3
        assert (out / "altham.csv").read_text().startswith("replicate,original,aggregated")
        assert (out / "colour_averages.csv").exists()

    def test_imputation_outputs_and_determinism(self, tmp_path):
        out = tmp_path / "a"
        args = [
            "simulate", "imputation", "--dgp", "1", "--response-model", "1",
            "--rate", "0.75", "--reps", "1", "--seed", "9", "--out", out,
        ]
        assert run_cli(args) == 0
        names = ("report.json", "metrics.csv", "estimates.csv")
        first = {name: (out / name).read_bytes() for name in names}
        assert run_cli(args) == 0
        for name in names:
            assert (out / name).read_bytes() == first[name]

    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ILOCA_SEED", "77")
        out = tmp_path / "out"
        code = run_cli([
            "simulate", "imputation", "--dgp", "1", "--response-model", "1",
            "--rate", "0.75", "--reps", "1", "--out", out,
        ])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["seed"] == 77

    def test_invalid_reps_exits_3(self, tmp_path):
        code = run_cli([
            "simulate", "imputation", "--dgp", "1", "--response-model", "1",
            "--rate", "0.75", "--reps", "0", "--out", tmp_path,
        ])
        assert code == 3
