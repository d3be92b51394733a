"""Imputation cells, cell-mean imputation, baselines and study metrics."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iloca import (
    ContingencyTable,
    DegenerateDataError,
    InvalidParameterError,
    SingularDesignError,
    SurveyDataset,
    atomic_cells,
    atomic_table,
    build_imputation_cells,
    cell_mean_impute,
    deterministic_regression_impute,
    null_cells,
    quantile_cells,
    quantile_cells_impute,
    relative_bias,
    rrmse,
    run_iloca,
)
from iloca.simgen import gen_dgp1, rng_for


def make_dataset(y, r, z1c, z2c, **extra):
    y = np.asarray(y, dtype=float)
    n = len(y)
    return SurveyDataset(
        ids=np.arange(1, n + 1),
        y=y,
        r=np.asarray(r, dtype=int),
        z1c=np.asarray(z1c, dtype=int),
        z2c=np.asarray(z2c, dtype=int),
        **extra,
    )


class TestSurveyDataset:
    def test_validation(self):
        with pytest.raises(InvalidParameterError):
            make_dataset([1.0, 2.0], [1, 2], [1, 1], [1, 1])
        with pytest.raises(InvalidParameterError):
            make_dataset([np.nan, 2.0], [1, 1], [1, 1], [1, 1])
        with pytest.raises(InvalidParameterError):
            make_dataset([1.0, 2.0], [1, 1], [0, 1], [1, 1])

    def test_missing_y_allowed_for_nonrespondents(self):
        ds = make_dataset([np.nan, 2.0], [0, 1], [1, 1], [1, 2])
        assert ds.n_respondents == 1

    def test_atomic_table_counts_everyone(self):
        ds = make_dataset([np.nan, 2.0, 3.0], [0, 1, 1], [1, 1, 2], [1, 2, 2])
        table = atomic_table(ds)
        assert table.total == 3
        assert table.values[0, 0] == 1
        assert table.values[1, 1] == 1


class TestImputationCellStructures:
    def test_empty_cluster_map_matches_atomic(self):
        table = ContingencyTable.from_counts(np.full((8, 5), 30.0))
        clusters, _ = run_iloca(table)  # nothing below the threshold
        cells = build_imputation_cells(clusters, table)
        assert cells.n_cells == 40
        rng = np.random.default_rng(0)
        ds = make_dataset(
            rng.random(60),
            np.ones(60),
            rng.integers(1, 9, 60),
            rng.integers(1, 6, 60),
        )
        assert np.array_equal(cells.assign(ds), atomic_cells(8, 5).assign(ds))

    def test_single_cluster_covering_all_matches_null(self):
        from iloca.engine import Cluster, ClusterMap

        members = tuple((r, c) for r in range(2) for c in range(2))
        cm = ClusterMap(
            shape=(2, 2),
            clusters=(Cluster(label=-1, members=members, total=10.0, undersized=False, straggler=False),),
            untouched=(),
            empty=(),
            flagged_singletons=(),
        )
        table = ContingencyTable.from_counts([[2, 3], [2, 3]])
        cells = build_imputation_cells(cm, table)
        assert cells.n_cells == 1
        ds = make_dataset([1.0, 2.0], [1, 1], [1, 2], [2, 1])
        assert np.array_equal(cells.assign(ds), null_cells(2, 2).assign(ds))

    def test_partition_on_simulated_run(self):
        rep = gen_dgp1(480, 8, 5, False, rng_for(5, 0))
        clusters, _ = run_iloca(rep.table)
        cells = build_imputation_cells(clusters, rep.table)
        ids = cells.assign(rep.dataset)
        assert ids.min() >= 0
        assert ids.max() < cells.n_cells
        # every non-empty cell id receives at least one atomic position
        grid = cells.atomic_map
        assert set(grid[grid >= 0].ravel()) == set(range(cells.n_cells))

    def test_shape_mismatch_rejected(self):
        table = ContingencyTable.from_counts(np.full((3, 3), 30.0))
        clusters, _ = run_iloca(table)
        with pytest.raises(InvalidParameterError):
            build_imputation_cells(clusters, ContingencyTable.from_counts(np.full((2, 2), 30.0)))


class TestCellMeanImpute:
    def test_two_respondents_one_missing(self):
        ds = make_dataset([2.0, 4.0, np.nan], [1, 1, 0], [1, 1, 1], [1, 1, 1])
        result = cell_mean_impute(ds, null_cells(1, 1))
        assert result.w[2] == 3.0
        assert result.fallback_cells == 0

    def test_full_response_identity(self):
        rng = np.random.default_rng(1)
        y = rng.random(40)
        ds = make_dataset(y, np.ones(40), rng.integers(1, 4, 40), rng.integers(1, 4, 40))
        for cells in (null_cells(3, 3), atomic_cells(3, 3)):
            result = cell_mean_impute(ds, cells)
            assert np.array_equal(result.w, y)
            assert result.imputed_mean == result.true_mean

    def test_null_structure_is_respondent_mean(self):
        rng = np.random.default_rng(2)
        y = rng.random(50)
        r = (rng.random(50) < 0.6).astype(int)
        ds = make_dataset(y, r, np.ones(50), np.ones(50))
        result = cell_mean_impute(ds, null_cells(1, 1))
        expected = (y[r == 1].sum() + (r == 0).sum() * y[r == 1].mean()) / 50
        assert abs(result.imputed_mean - expected) <= 1e-12
        assert abs(result.imputed_mean - y[r == 1].mean()) <= 1e-12

    def test_respondent_preservation(self):
        rng = np.random.default_rng(3)
        y = rng.random(60)
        r = (rng.random(60) < 0.5).astype(int)
        ds = make_dataset(y, r, rng.integers(1, 3, 60), rng.integers(1, 3, 60))
        result = cell_mean_impute(ds, atomic_cells(2, 2))
        assert np.array_equal(result.w[r == 1], y[r == 1])

    def test_mixture_identity(self):
        rng = np.random.default_rng(4)
        y = rng.random(80)
        r = (rng.random(80) < 0.7).astype(int)
        if not r.any():
            r[0] = 1
        ds = make_dataset(y, r, rng.integers(1, 5, 80), rng.integers(1, 4, 80))
        result = cell_mean_impute(ds, atomic_cells(4, 3))
        assert abs(result.mixture_mean() - result.imputed_mean) <= 1e-12

    def test_respondent_empty_cell_falls_back(self):
        ds = make_dataset(
            [1.0, 3.0, np.nan], [1, 1, 0], [1, 1, 2], [1, 1, 1]
        )
        result = cell_mean_impute(ds, atomic_cells(2, 1))
        assert result.fallback_cells == 1
        assert result.w[2] == 2.0  # global respondent mean

    def test_zero_respondents_error(self):
        ds = make_dataset([np.nan, np.nan], [0, 0], [1, 1], [1, 1])
        with pytest.raises(DegenerateDataError):
            cell_mean_impute(ds, null_cells(1, 1))


class TestQuantileCells:
    def test_single_cell_equals_null(self):
        rng = np.random.default_rng(5)
        y = rng.random(50)
        r = (rng.random(50) < 0.5).astype(int)
        r[0] = 1
        ds = make_dataset(y, r, np.ones(50), np.ones(50))
        q1 = quantile_cells_impute(ds, 1)
        null = cell_mean_impute(ds, null_cells(1, 1))
        assert np.array_equal(q1.w, null.w)

    def test_boundary_goes_to_lower_cell(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        cells = quantile_cells(y, 2)  # boundary at the median 2.5
        ds = make_dataset([1.0, 2.5, 3.0, 4.0], [1, 1, 1, 1], [1, 1, 1, 1], [1, 1, 1, 1])
        ids = cells.assign(ds)
        assert ids[1] == 0  # exactly on the boundary -> lower cell
        assert ids[3] == 1

    def test_range_validation(self):
        y = np.arange(10.0)
        with pytest.raises(InvalidParameterError):
            quantile_cells(y, 0)
        with pytest.raises(InvalidParameterError):
            quantile_cells(y, 11)

    def test_requires_full_response(self):
        ds = make_dataset([1.0, np.nan], [1, 0], [1, 1], [1, 1])
        with pytest.raises(DegenerateDataError):
            quantile_cells_impute(ds, 2)


class TestDeterministicRegression:
    def test_linear_rank_pattern_recovered_exactly(self):
        n = 200
        y = 0.3 + 0.5 * (np.arange(1, n + 1) - 0.5) / n
        rng = np.random.default_rng(6)
        y = rng.permutation(y)
        r = np.zeros(n, dtype=int)
        r[rng.choice(n, size=n // 2, replace=False)] = 1
        ds = make_dataset(y, r, np.ones(n), np.ones(n))
        result = deterministic_regression_impute(ds, 1)
        assert abs(result.imputed_mean - result.true_mean) <= 1e-9
        assert np.allclose(result.w, y, atol=1e-9)

    def test_quadratic_form_recovered_exactly(self):
        rng = np.random.default_rng(7)
        n = 120
        z1 = rng.exponential(2.0, n)
        z2 = rng.exponential(2.0, n)
        y = 20 + 10 * z1 + 0.5 * z2 + 10 * z1**2
        r = (rng.random(n) < 0.5).astype(int)
        r[:4] = 1
        ds = make_dataset(y, r, np.ones(n), np.ones(n), z1=z1, z2=z2)
        result = deterministic_regression_impute(ds, 2)
        assert np.allclose(result.w, y, rtol=1e-9)

    def test_singular_design_raises(self):
        n = 30
        z1 = np.full(n, 2.0)
        z2 = np.arange(n, dtype=float)
        y = z2 + 1
        r = np.ones(n, dtype=int)
        r[:5] = 0
        ds = make_dataset(np.where(r == 1, y, np.nan), r, np.ones(n), np.ones(n), z1=z1, z2=z2)
        with pytest.raises(SingularDesignError):
            deterministic_regression_impute(ds, 2)

    def test_needs_two_respondents(self):
        ds = make_dataset([1.0, np.nan], [1, 0], [1, 1], [1, 1])
        with pytest.raises(DegenerateDataError):
            deterministic_regression_impute(ds, 1)


class TestMetrics:
    def test_perfect_replication_is_zero(self):
        pairs = [(2.0, 2.0), (3.0, 3.0)]
        assert relative_bias(pairs) == 0.0
        assert rrmse(pairs) == 0.0

    def test_proportional_inflation(self):
        pairs = [(1.05 * t, t) for t in (1.0, 2.0, 4.0)]
        assert abs(relative_bias(pairs) - 5.0) <= 1e-12

    def test_constant_absolute_error(self):
        truth = 4.0
        d = 0.25
        pairs = [(truth + d, truth)] * 10
        assert abs(rrmse(pairs) - 100 * d / truth) <= 1e-12

    @given(
        st.lists(
            st.tuples(
                st.floats(min_value=0.5, max_value=2.0),
                st.floats(min_value=0.5, max_value=2.0),
            ),
            min_size=1,
            max_size=40,
        )
    )
    @settings(max_examples=100, deadline=None)
    def test_rrmse_dominates_relative_bias(self, pairs):
        assert rrmse(pairs) >= abs(relative_bias(pairs)) - 1e-12

    def test_zero_denominator(self):
        with pytest.raises(DegenerateDataError):
            relative_bias([(1.0, 1.0), (1.0, -1.0)])
