"""Two-way contingency tables and their log-odds ratio diagnostics.

A table cell is in one of three states, encoded directly in the value grid:

* active: a strictly positive count,
* empty: a zero count,
* assigned: a negative integer cluster label written by the aggregation
  engine.

Only active cells take part in marginals, the independence test and the
log-odds enumeration.  For a 2x2 sub-table picked out by rows ``i < k`` and
columns ``j < l`` the odds ratio is the diagonal product over the
off-diagonal product, ``(a[i,j] * a[k,l]) / (a[i,l] * a[k,j])``, and the
log-odds ratio is its natural log; a value of zero signals independence of
the four cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import special

from .errors import DegenerateDataError, InvalidParameterError

__all__ = [
    "CellState",
    "ContingencyTable",
    "OddsRatioRecord",
    "AlthamSummary",
    "BlockProfile",
    "BlockClassSummary",
    "cell_state",
    "enumerate_log_odds",
    "log_odds_records",
    "chi_square_independence",
    "altham_index",
    "altham_hack",
    "central_peak_profile",
]


class CellState(Enum):
    ACTIVE = "active"
    EMPTY = "empty"
    ASSIGNED = "assigned"


def cell_state(value: float) -> CellState:
    """Classify a raw grid value into its cell state."""
    if value > 0:
        return CellState.ACTIVE
    if value == 0:
        return CellState.EMPTY
    return CellState.ASSIGNED


class ContingencyTable:
    """An m x n grid of cell values with marginals over active cells.

    ``values`` may contain negative integer cluster labels (assigned cells);
    those cells are excluded from every marginal and ratio computation.
    Counts may be fractional: augmented tables built by :func:`altham_hack`
    hold cluster means.
    """

    __slots__ = ("values",)

    def __init__(self, values) -> None:
        grid = np.asarray(values, dtype=float)
        if grid.ndim != 2:
            raise InvalidParameterError("table must be two-dimensional")
        if grid.shape[0] < 2 or grid.shape[1] < 2:
            raise InvalidParameterError("table needs at least 2 rows and 2 columns")
        if not np.isfinite(grid).all():
            raise InvalidParameterError("table values must be finite")
        neg = grid[grid < 0]
        if neg.size and not np.array_equal(neg, np.round(neg)):
            raise InvalidParameterError("negative cells must be integer cluster labels")
        self.values = grid

    @classmethod
    def from_counts(cls, counts) -> "ContingencyTable":
        """Build a table from plain counts; rejects negative entries."""
        grid = np.asarray(counts, dtype=float)
        if grid.size and (grid < 0).any():
            raise InvalidParameterError("counts must be non-negative")
        return cls(grid)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def active_mask(self) -> np.ndarray:
        return self.values > 0

    @property
    def active_count(self) -> int:
        return int(self.active_mask.sum())

    def active_values(self) -> np.ndarray:
        """Grid with assigned cells zeroed out, for marginal arithmetic."""
        return np.where(self.active_mask, self.values, 0.0)

    @property
    def row_totals(self) -> np.ndarray:
        return self.active_values().sum(axis=1)

    @property
    def col_totals(self) -> np.ndarray:
        return self.active_values().sum(axis=0)

    @property
    def total(self) -> float:
        return float(self.active_values().sum())

    def state(self, i: int, j: int) -> CellState:
        return cell_state(self.values[i, j])

    def copy(self) -> "ContingencyTable":
        return ContingencyTable(self.values.copy())

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"ContingencyTable(shape={self.shape}, active={self.active_count})"


class OddsRatioRecord(NamedTuple):
    """One 2x2 sub-table's indices, cell values and (log-)odds ratio.

    ``cells`` holds the values at positions (i,j), (k,j), (i,l), (k,l) in
    that fixed slot order; all four are strictly positive.
    """

    i: int
    k: int
    j: int
    l: int
    cells: tuple[float, float, float, float]
    odds: float
    log_odds: float

    @property
    def abs_log_odds(self) -> float:
        return abs(self.log_odds)

    def positions(self) -> tuple[tuple[int, int], ...]:
        return ((self.i, self.j), (self.k, self.j), (self.i, self.l), (self.k, self.l))

    def sort_key(self) -> tuple:
        return (self.abs_log_odds, self.i, self.k, self.j, self.l)


def log_odds_records(values: np.ndarray) -> list[OddsRatioRecord]:
    """Enumerate every 2x2 all-active sub-table of a raw value grid.

    Records come back in lexicographic (i, k, j, l) order.  A grid whose
    positive cells admit no such sub-table yields an empty list.
    """
    grid = np.asarray(values, dtype=float)
    m, n = grid.shape
    if m < 2 or n < 2:
        return []
    ri, rk = np.triu_indices(m, k=1)
    cj, cl = np.triu_indices(n, k=1)
    a_ij = grid[ri[:, None], cj[None, :]]
    a_kj = grid[rk[:, None], cj[None, :]]
    a_il = grid[ri[:, None], cl[None, :]]
    a_kl = grid[rk[:, None], cl[None, :]]
    ok = (a_ij > 0) & (a_kj > 0) & (a_il > 0) & (a_kl > 0)
    if not ok.any():
        return []
    with np.errstate(divide="ignore", invalid="ignore"):
        odds = np.where(ok, a_ij * a_kl / (a_il * a_kj), np.nan)
    log_odds = np.log(odds, where=ok, out=np.full_like(odds, np.nan))
    rows, cols = np.nonzero(ok)
    records = []
    for r, c in zip(rows.tolist(), cols.tolist()):
        records.append(
            OddsRatioRecord(
                i=int(ri[r]),
                k=int(rk[r]),
                j=int(cj[c]),
                l=int(cl[c]),
                cells=(
                    float(a_ij[r, c]),
                    float(a_kj[r, c]),
                    float(a_il[r, c]),
                    float(a_kl[r, c]),
                ),
                odds=float(odds[r, c]),
                log_odds=float(log_odds[r, c]),
            )
        )
    return records


def enumerate_log_odds(table: ContingencyTable) -> list[OddsRatioRecord]:
    """All odds/log-odds ratio records of a table's active cells."""
    return log_odds_records(table.values)


def chi_square_independence(table: ContingencyTable) -> tuple[float, int, float]:
    """Pearson chi-square test of row/column independence over active cells.

    Returns ``(statistic, dof, p_value)`` with ``dof = (m-1)(n-1)`` and the
    upper-tail p-value from the regularized incomplete gamma function.
    Raises :class:`DegenerateDataError` when any active-cell row or column
    total is zero.
    """
    row = table.row_totals
    col = table.col_totals
    if (row <= 0).any() or (col <= 0).any():
        raise DegenerateDataError("chi-square needs strictly positive row and column totals")
    total = table.total
    expected = np.outer(row, col) / total
    observed = table.active_values()
    mask = table.active_mask
    stat = float((((observed - expected) ** 2 / expected)[mask]).sum())
    dof = (table.m - 1) * (table.n - 1)
    p_value = float(special.gammaincc(dof / 2.0, stat / 2.0))
    return stat, dof, p_value


@dataclass(frozen=True)
class AlthamSummary:
    """Independence-style dependence index: the sum of squared log-odds."""

    total: float
    count: int
    mean: float

    @classmethod
    def of(cls, squared_sum: float, count: int) -> "AlthamSummary":
        return cls(total=squared_sum, count=count, mean=squared_sum / count if count else 0.0)


def altham_index(records: Iterable[OddsRatioRecord]) -> AlthamSummary:
    """Sum of squared log-odds ratios; larger means more table dependence."""
    total = 0.0
    count = 0
    for rec in records:
        total += rec.log_odds * rec.log_odds
        count += 1
    return AlthamSummary.of(total, count)


def altham_hack(original: ContingencyTable, clusters) -> AlthamSummary:
    """Dependence retained after aggregation, via a mean-augmented table.

    Every member cell of each cluster is replaced by the arithmetic mean of
    the *original* counts of that cluster's members; untouched cells keep
    their original values.  The index of the augmented table can then be
    compared with the original's.  ``clusters`` is anything with an
    iterable of clusters exposing ``members`` (see ``engine.ClusterMap``), or
    a plain iterable of member-position lists.
    """
    augmented = original.values.copy()
    groups = getattr(clusters, "clusters", clusters)
    for group in groups:
        members = getattr(group, "members", group)
        members = list(members)
        if not members:
            continue
        mean = float(np.mean([original.values[r, c] for r, c in members]))
        for r, c in members:
            augmented[r, c] = mean
    return altham_index(log_odds_records(augmented))


@dataclass(frozen=True)
class BlockClassSummary:
    """Count, sample variance and small-ratio share for one ratio class."""

    count: int
    log_odds_variance: float
    share_below: float


@dataclass(frozen=True)
class BlockProfile:
    """Ratios split by whether their column pair lies in the left block,
    the right block, or straddles both."""

    left_columns: frozenset[int]
    threshold: float
    left: BlockClassSummary
    right: BlockClassSummary
    cross: BlockClassSummary

    @property
    def total(self) -> int:
        return self.left.count + self.right.count + self.cross.count


def _summarize_class(log_odds: Sequence[float], threshold: float) -> BlockClassSummary:
    n = len(log_odds)
    if n == 0:
        return BlockClassSummary(count=0, log_odds_variance=0.0, share_below=0.0)
    arr = np.asarray(log_odds, dtype=float)
    var = float(arr.var(ddof=1)) if n > 1 else 0.0
    share = float((np.abs(arr) < threshold).mean())
    return BlockClassSummary(count=n, log_odds_variance=var, share_below=share)


def central_peak_profile(
    table: ContingencyTable, left_columns: Iterable[int], threshold: float
) -> BlockProfile:
    """Classify every ratio by column block and summarize each class.

    ``left_columns`` must be a non-empty proper subset of the table's
    columns; ``threshold`` is the |log-odds| cutoff used for the
    small-ratio share.
    """
    left = frozenset(int(c) for c in left_columns)
    if not left or not left.issubset(range(table.n)) or len(left) >= table.n:
        raise InvalidParameterError("left_columns must be a non-empty proper subset of columns")
    if not threshold > 0:
        raise InvalidParameterError("threshold must be positive")
    left_vals: list[float] = []
    right_vals: list[float] = []
    cross_vals: list[float] = []
    for rec in enumerate_log_odds(table):
        j_in = rec.j in left
        l_in = rec.l in left
        if j_in and l_in:
            left_vals.append(rec.log_odds)
        elif not j_in and not l_in:
            right_vals.append(rec.log_odds)
        else:
            cross_vals.append(rec.log_odds)
    return BlockProfile(
        left_columns=left,
        threshold=float(threshold),
        left=_summarize_class(left_vals, threshold),
        right=_summarize_class(right_vals, threshold),
        cross=_summarize_class(cross_vals, threshold),
    )
