"""Cell-mean imputation, overall-mean estimators and study metrics.

A survey record carries a continuous response ``y`` observed only where the
response indicator ``r`` is 1, plus a pair of class labels that place it in
one atomic cell of a two-way cross-classification.  Imputation replaces
each missing response with the respondent mean of the record's imputation
cell; the overall imputed mean weights cell means by cell shares, which
with unit weights equals the plain mean of the completed working variable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .engine import ClusterMap
from .errors import (
    DegenerateDataError,
    InvalidParameterError,
    SingularDesignError,
)
from .table import ContingencyTable

__all__ = [
    "SurveyDataset",
    "ImputationCells",
    "EstimatorResult",
    "atomic_table",
    "null_cells",
    "atomic_cells",
    "build_imputation_cells",
    "quantile_cells",
    "cell_mean_impute",
    "deterministic_regression_impute",
    "quantile_cells_impute",
    "relative_bias",
    "rrmse",
]

NULL = "null"
ATOMIC = "atomic"
ILOCA = "iloca"
QUANTILE = "quantile"


@dataclass(frozen=True, eq=False)
class SurveyDataset:
    """Unit-weight survey records with a pair of classification labels.

    ``y`` holds the response (NaN allowed only where ``r`` is 0), ``z1c``
    and ``z2c`` are 1-based class labels, and ``z1``/``z2``/``z3`` are the
    optional auxiliary values feeding the response models.
    """

    ids: np.ndarray
    y: np.ndarray
    r: np.ndarray
    z1c: np.ndarray
    z2c: np.ndarray
    z1: Optional[np.ndarray] = None
    z2: Optional[np.ndarray] = None
    z3: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.y)
        for name in ("ids", "r", "z1c", "z2c"):
            if len(getattr(self, name)) != n:
                raise InvalidParameterError(f"column {name} has wrong length")
        for name in ("z1", "z2", "z3"):
            col = getattr(self, name)
            if col is not None and len(col) != n:
                raise InvalidParameterError(f"column {name} has wrong length")
        if not np.isin(self.r, (0, 1)).all():
            raise InvalidParameterError("response indicator must be 0 or 1")
        resp = self.r == 1
        if not np.isfinite(self.y[resp]).all():
            raise InvalidParameterError("respondents must carry a response value")
        if (self.z1c < 1).any() or (self.z2c < 1).any():
            raise InvalidParameterError("class labels must be positive integers")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def respondent_mask(self) -> np.ndarray:
        return self.r == 1

    @property
    def n_respondents(self) -> int:
        return int(self.respondent_mask.sum())

    def class_dims(self) -> tuple[int, int]:
        return int(self.z1c.max()), int(self.z2c.max())


def atomic_table(dataset: SurveyDataset, m: Optional[int] = None, n: Optional[int] = None) -> ContingencyTable:
    """Cross-tabulate all records (respondents and non-respondents) into the
    atomic-cell contingency table."""
    rows, cols = dataset.class_dims()
    m = m or rows
    n = n or cols
    if rows > m or cols > n:
        raise InvalidParameterError("class labels exceed the requested table dimensions")
    counts = np.zeros((m, n))
    np.add.at(counts, (dataset.z1c - 1, dataset.z2c - 1), 1.0)
    return ContingencyTable.from_counts(counts)


@dataclass(frozen=True, eq=False)
class ImputationCells:
    """A total partition of records into imputation cells.

    Atomic-backed kinds map each (row, col) class pair to a cell id via
    ``atomic_map`` (-1 marks empty atomic cells, which no record can reach);
    the quantile kind assigns records by their response value against the
    stored boundaries, ties to the lower cell and the top cell closed.
    """

    kind: str
    n_cells: int
    atomic_map: Optional[np.ndarray] = None
    boundaries: Optional[np.ndarray] = None

    def assign(self, dataset: SurveyDataset) -> np.ndarray:
        if self.kind == QUANTILE:
            if not np.isfinite(dataset.y).all():
                raise DegenerateDataError("quantile cells need the full response vector")
            assert self.boundaries is not None
            return np.searchsorted(self.boundaries, dataset.y, side="left").astype(int)
        assert self.atomic_map is not None
        m, n = self.atomic_map.shape
        rows = dataset.z1c - 1
        cols = dataset.z2c - 1
        if rows.max() >= m or cols.max() >= n:
            raise InvalidParameterError("class labels outside the imputation-cell map")
        ids = self.atomic_map[rows, cols]
        if (ids < 0).any():
            raise DegenerateDataError("records landed in an empty atomic cell")
        return ids.astype(int)


def null_cells(m: int, n: int) -> ImputationCells:
    """The degenerate single cell covering the whole dataset."""
    return ImputationCells(kind=NULL, n_cells=1, atomic_map=np.zeros((m, n), dtype=int))


def atomic_cells(m: int, n: int) -> ImputationCells:
    """Every atomic cell is its own imputation cell."""
    return ImputationCells(kind=ATOMIC, n_cells=m * n, atomic_map=np.arange(m * n).reshape(m, n))


def build_imputation_cells(cluster_map: ClusterMap, table: ContingencyTable) -> ImputationCells:
    """Clusters become cells; untouched active cells become singletons.

    Empty atomic cells map to the reserved id -1; no record lands there
    because the table was cross-tabulated from the same records.
    """
    if cluster_map.shape != table.shape:
        raise InvalidParameterError("cluster map does not match the table shape")
    grid = np.full(table.shape, -1, dtype=int)
    next_id = 0
    for cluster in cluster_map.clusters:
        for r, c in cluster.members:
            grid[r, c] = next_id
        next_id += 1
    for r, c in cluster_map.untouched:
        grid[r, c] = next_id
        next_id += 1
    return ImputationCells(kind=ILOCA, n_cells=next_id, atomic_map=grid)


def quantile_cells(y: np.ndarray, n_cells: int) -> ImputationCells:
    """Cells cut at empirical quantiles of the full response vector.

    Boundaries sit at proportions q/n_cells (linear interpolation); records
    on a boundary go to the lower cell and the top cell is closed.
    """
    y = np.asarray(y, dtype=float)
    if not np.isfinite(y).all():
        raise DegenerateDataError("quantile cells need the full response vector")
    if not 1 <= n_cells <= len(y):
        raise InvalidParameterError("number of quantile cells out of range")
    probs = np.arange(1, n_cells) / n_cells
    boundaries = np.quantile(y, probs) if n_cells > 1 else np.empty(0)
    return ImputationCells(kind=QUANTILE, n_cells=n_cells, boundaries=np.asarray(boundaries))


@dataclass(frozen=True, eq=False)
class EstimatorResult:
    """Completed working variable and the imputed overall mean.

    ``cell_means`` and ``cell_sizes`` are per imputation cell (NaN / 0 for
    cells without records); regression baselines leave them as None.
    ``true_mean`` is the plain mean of the full response when it is fully
    observed (simulation), NaN otherwise.
    """

    w: np.ndarray
    imputed_mean: float
    true_mean: float
    cell_means: Optional[np.ndarray] = None
    cell_sizes: Optional[np.ndarray] = None
    fallback_cells: int = 0

    def mixture_mean(self) -> float:
        """Share-weighted combination of per-cell means; equals
        ``imputed_mean`` up to float error when cells are present."""
        if self.cell_means is None or self.cell_sizes is None:
            return self.imputed_mean
        total = self.cell_sizes.sum()
        have = self.cell_sizes > 0
        return float((self.cell_sizes[have] / total * self.cell_means[have]).sum())


def _true_mean(y: np.ndarray) -> float:
    return float(y.mean()) if np.isfinite(y).all() else float("nan")


def cell_mean_impute(dataset: SurveyDataset, cells: ImputationCells) -> EstimatorResult:
    """Replace each missing response with its cell's respondent mean.

    Cells holding records but no respondents fall back to the global
    respondent mean and are counted in ``fallback_cells``.
    """
    resp = dataset.respondent_mask
    if not resp.any():
        raise DegenerateDataError("dataset has no respondents")
    idx = cells.assign(dataset)
    n_cells = cells.n_cells
    sizes = np.bincount(idx, minlength=n_cells).astype(float)
    resp_counts = np.bincount(idx[resp], minlength=n_cells).astype(float)
    resp_sums = np.bincount(idx[resp], weights=dataset.y[resp], minlength=n_cells)
    global_mean = float(dataset.y[resp].mean())
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(resp_counts > 0, resp_sums / np.maximum(resp_counts, 1), global_mean)
    fallback = int(((sizes > 0) & (resp_counts == 0)).sum())
    w = dataset.y.copy()
    missing = ~resp
    w[missing] = means[idx[missing]]
    cell_means = np.where(sizes > 0, means, np.nan)
    return EstimatorResult(
        w=w,
        imputed_mean=float(w.mean()),
        true_mean=_true_mean(dataset.y),
        cell_means=cell_means,
        cell_sizes=sizes,
        fallback_cells=fallback,
    )


def _fit_line(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, int]:
    design = np.column_stack([np.ones_like(x), x])
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    return coef, rank


def deterministic_regression_impute(dataset: SurveyDataset, dgp_kind: int) -> EstimatorResult:
    """Regression baseline used for bias monitoring.

    For the rank-based generating process (kind 1) the respondents' responses
    are regressed on their mid-rank positions within the full sorted
    response vector, and each non-respondent is predicted at its own
    mid-rank position; this uses the full response vector, like the
    quantile-cell baseline, so it is an exact measure.  For the regression
    process (kind 2) the known functional form {1, z1, z2, z1^2} is fitted
    over respondents and non-respondents are predicted from their own
    auxiliary values.
    """
    resp = dataset.respondent_mask
    if resp.sum() < 2:
        raise DegenerateDataError("regression baseline needs at least two respondents")
    w = dataset.y.copy()
    missing = ~resp
    if dgp_kind == 1:
        if not np.isfinite(dataset.y).all():
            raise DegenerateDataError("rank-based baseline needs the full response vector")
        order = np.argsort(dataset.y, kind="stable")
        positions = np.empty(dataset.n)
        positions[order] = (np.arange(dataset.n) + 0.5) / dataset.n
        coef, rank = _fit_line(positions[resp], dataset.y[resp])
        if rank < 2:
            raise SingularDesignError("rank positions are collinear")
        w[missing] = coef[0] + coef[1] * positions[missing]
    elif dgp_kind == 2:
        if dataset.z1 is None or dataset.z2 is None:
            raise InvalidParameterError("regression baseline needs z1 and z2")
        design = np.column_stack(
            [np.ones(dataset.n), dataset.z1, dataset.z2, dataset.z1**2]
        )
        coef, _, rank, _ = np.linalg.lstsq(design[resp], dataset.y[resp], rcond=None)
        if rank < design.shape[1]:
            raise SingularDesignError("collinear regressors in the baseline design")
        w[missing] = design[missing] @ coef
    else:
        raise InvalidParameterError(f"unknown generating-process kind: {dgp_kind}")
    return EstimatorResult(
        w=w,
        imputed_mean=float(w.mean()),
        true_mean=_true_mean(dataset.y),
    )


def quantile_cells_impute(dataset: SurveyDataset, n_cells: int) -> EstimatorResult:
    """Oracle baseline: cell-mean imputation inside response-quantile cells
    cut from the fully observed response vector."""
    cells = quantile_cells(dataset.y, n_cells)
    return cell_mean_impute(dataset, cells)


def _replicate_arrays(replicates) -> tuple[np.ndarray, np.ndarray]:
    pairs = np.asarray(list(replicates), dtype=float)
    if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] < 1:
        raise InvalidParameterError("replicates must be a non-empty sequence of (imputed, actual) pairs")
    return pairs[:, 0], pairs[:, 1]


def relative_bias(replicates: Sequence[tuple[float, float]]) -> float:
    """Monte Carlo percent relative bias of the imputed mean."""
    est, truth = _replicate_arrays(replicates)
    denom = truth.mean()
    if denom == 0:
        raise DegenerateDataError("mean of the actual means is zero")
    return float(100.0 * (est.mean() - denom) / denom)


def rrmse(replicates: Sequence[tuple[float, float]]) -> float:
    """Monte Carlo percent relative root mean square error."""
    est, truth = _replicate_arrays(replicates)
    denom = truth.mean()
    if denom == 0:
        raise DegenerateDataError("mean of the actual means is zero")
    return float(100.0 * np.sqrt(np.mean((est - truth) ** 2)) / denom)
