"""Bottom-up aggregation of small contingency-table cells into clusters.

The procedure repeatedly enumerates the log-odds ratios of the still-active
cells, seeds a cluster from the smallest-|log-odds| ratio that contains a
sub-threshold cell (the generator ratio and generator cell), then grows the
cluster by a mini-max rule: among the k smallest remaining ratios, pick the
one whose cell values deviate least (in max absolute positionwise
difference) from the generator ratio's cells, and colour that candidate's
interchangeable cell, i.e. the member whose value is closest to the
generator cell's value.  Growth stops once the cluster's summed count
clears the (step-relaxed) size threshold or the candidate pool runs out.

A final pass sweeps up remaining under-sized cells: each seeds its own
cluster and pulls in value-close cells from the ratios that contain it.

In frequency mode the distance uses cell counts only.  In imputation mode
the per-cell respondent mean and standard deviation enter as extra distance
components, each min-max scaled over the candidate pool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateDataError, InvalidParameterError
from .table import ContingencyTable, OddsRatioRecord, log_odds_records

__all__ = [
    "FREQUENCY",
    "IMPUTATION",
    "IlocaConfig",
    "CellStats",
    "CandidateDistance",
    "Cluster",
    "ClusterMap",
    "StepRecord",
    "AggregationTrace",
    "relaxed_threshold",
    "select_generator",
    "candidate_distances",
    "run_iloca",
    "assign_stragglers",
]

FREQUENCY = "frequency"
IMPUTATION = "imputation"

# Main-loop stop reasons recorded on the trace.
STOP_NO_SMALL_CELLS = "no_small_cells"
STOP_NO_QUALIFYING_RATIO = "no_qualifying_ratio"
STOP_STEP_LIMIT = "step_limit"

CLOSE_THRESHOLD_MET = "threshold_met"
CLOSE_POOL_EXHAUSTED = "pool_exhausted"


@dataclass(frozen=True)
class IlocaConfig:
    """Tuning knobs for the aggregation run.

    ``min_cell_size`` is the cluster-size target (a cluster closes once its
    summed original counts exceed the step threshold), ``max_steps`` caps
    the main loop, and ``k_proportion`` sets the share of smallest ratios
    eligible as growth candidates.
    """

    min_cell_size: float = 20.0
    max_steps: int = 20
    k_proportion: float = 0.05
    mode: str = FREQUENCY
    relaxation: bool = True

    def validate(self) -> None:
        if not self.min_cell_size > 0:
            raise InvalidParameterError("min_cell_size must be positive")
        if self.max_steps < 1:
            raise InvalidParameterError("max_steps must be at least 1")
        if not 0 < self.k_proportion <= 1:
            raise InvalidParameterError("k_proportion must be in (0, 1]")
        if self.mode not in (FREQUENCY, IMPUTATION):
            raise InvalidParameterError(f"unknown mode: {self.mode!r}")


@dataclass(frozen=True)
class CellStats:
    """Per-cell respondent means and standard deviations for a table.

    Cells without respondents carry the global respondent mean/sd and are
    flagged; cells with a single respondent carry sd 0.  These substitutes
    keep the imputation-mode distance finite and totally ordered.
    """

    means: np.ndarray
    sds: np.ndarray
    counts: np.ndarray
    global_mean: float
    global_sd: float
    fallback: np.ndarray

    @classmethod
    def from_dataset(cls, dataset, m: int, n: int) -> "CellStats":
        """Compute respondent statistics from a survey dataset's class labels."""
        resp = dataset.r == 1
        if not resp.any():
            raise DegenerateDataError("dataset has no respondents")
        rows = dataset.z1c - 1
        cols = dataset.z2c - 1
        if rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n:
            raise InvalidParameterError("class labels outside the table dimensions")
        idx = rows * n + cols
        y_resp = dataset.y[resp]
        idx_resp = idx[resp]
        counts = np.bincount(idx_resp, minlength=m * n).astype(int)
        sums = np.bincount(idx_resp, weights=y_resp, minlength=m * n)
        sq_sums = np.bincount(idx_resp, weights=y_resp**2, minlength=m * n)
        global_mean = float(y_resp.mean())
        global_sd = float(y_resp.std(ddof=1)) if y_resp.size > 1 else 0.0
        with np.errstate(invalid="ignore", divide="ignore"):
            means = np.where(counts > 0, sums / np.maximum(counts, 1), global_mean)
            ss = sq_sums - counts * means**2
            sds = np.where(counts > 1, np.sqrt(np.maximum(ss, 0.0) / np.maximum(counts - 1, 1)), 0.0)
        sds = np.where(counts == 0, global_sd, sds)
        fallback = counts == 0
        return cls(
            means=means.reshape(m, n),
            sds=sds.reshape(m, n),
            counts=counts.reshape(m, n),
            global_mean=global_mean,
            global_sd=global_sd,
            fallback=fallback.reshape(m, n),
        )

    @classmethod
    def from_arrays(cls, means, sds, counts=None) -> "CellStats":
        """Wrap externally supplied mean/sd grids (e.g. CLI table inputs).

        Cells with a missing mean (NaN) or a zero count fall back to the
        count-weighted global mean and pooled sd of the provided cells.
        """
        means = np.asarray(means, dtype=float)
        sds = np.asarray(sds, dtype=float)
        if means.shape != sds.shape:
            raise InvalidParameterError("means and sds must have the same shape")
        if counts is None:
            counts = np.where(np.isfinite(means), 1, 0)
        counts = np.asarray(counts)
        known = np.isfinite(means) & (counts > 0)
        if not known.any():
            raise DegenerateDataError("no cell statistics available")
        weights = counts[known].astype(float)
        global_mean = float(np.average(means[known], weights=weights))
        global_sd = float(math.sqrt(np.average(np.nan_to_num(sds[known]) ** 2, weights=weights)))
        out_means = np.where(known, means, global_mean)
        out_sds = np.where(known, np.nan_to_num(sds), global_sd)
        return cls(
            means=out_means,
            sds=out_sds,
            counts=counts.astype(int),
            global_mean=global_mean,
            global_sd=global_sd,
            fallback=~known,
        )


@dataclass(frozen=True)
class CandidateDistance:
    """A candidate ratio's distance to the generator and its pick-able cell."""

    record: OddsRatioRecord
    count_gap: float
    mean_gap: float
    sd_gap: float
    scaled: Optional[tuple[float, float, float]]
    distance: float
    cell: tuple[int, int]
    cell_value: float


def relaxed_threshold(min_cell_size: float, m: int, n: int, active_count: int, steps: int) -> float:
    """Step-relaxed cluster-size threshold.

    Computed fresh from the configured minimum each outer step: the factor
    (m*n)/(active_count + 1 + steps) inflates the threshold as active cells
    deplete, so later steps accept larger cells.
    """
    if active_count < 1:
        raise InvalidParameterError("active_count must be at least 1")
    if steps < 1:
        raise InvalidParameterError("steps must be at least 1")
    return min_cell_size * (m * n) / (active_count + 1 + steps)


def select_generator(
    records: Sequence[OddsRatioRecord], threshold: float
) -> Optional[tuple[OddsRatioRecord, tuple[int, int], float]]:
    """Pick the generator ratio and generator cell.

    ``records`` must already be sorted ascending by |log-odds|.  The
    generator is the first record whose four cells contain a value below
    ``threshold``; its generator cell is the smallest such value (ties go to
    the lexicographically first table position).  Returns ``None`` when no
    record qualifies, which terminates the main loop.
    """
    for rec in records:
        qualifying = [
            (value, pos)
            for value, pos in zip(rec.cells, rec.positions())
            if value < threshold
        ]
        if qualifying:
            value, pos = min(qualifying, key=lambda vp: (vp[0], vp[1]))
            return rec, pos, value
    return None


def _interchangeable(
    record: OddsRatioRecord, anchor_value: float, exclude: Optional[tuple[int, int]] = None
) -> tuple[tuple[int, int], float, float]:
    """The member cell whose value is closest to the anchor value.

    Ties break on table position.  ``exclude`` drops the anchor's own
    position when the anchor cell belongs to the record.
    """
    best = None
    for value, pos in zip(record.cells, record.positions()):
        if exclude is not None and pos == exclude:
            continue
        key = (abs(value - anchor_value), pos)
        if best is None or key < best[0]:
            best = (key, pos, value)
    assert best is not None
    return best[1], best[2], best[0][0]


def _minmax_scale(raw: list[float]) -> list[float]:
    # A component that is constant across the pool carries no information
    # and scales to 0 for every candidate.
    lo, hi = min(raw), max(raw)
    if hi == lo:
        return [0.0] * len(raw)
    return [(x - lo) / (hi - lo) for x in raw]


def candidate_distances(
    records: Sequence[OddsRatioRecord],
    generator: OddsRatioRecord,
    k: int,
    mode: str = FREQUENCY,
    stats: Optional[CellStats] = None,
) -> list[CandidateDistance]:
    """Distances of the k smallest-|log-odds| non-generator ratios.

    The count component is the maximum absolute positionwise difference
    between the candidate's four cells and the generator's.  In imputation
    mode the analogous mean and sd components are added after min-max
    scaling each component over the pool.  Candidates come back sorted
    ascending by distance, ties by |log-odds| then indices.
    """
    if k < 0:
        raise InvalidParameterError("pool size must be non-negative")
    if mode == IMPUTATION and stats is None:
        raise InvalidParameterError("imputation mode requires cell statistics")
    pool = [rec for rec in records if rec is not generator][:k]
    if not pool:
        return []
    gen_pos = generator.positions()
    count_gaps = []
    mean_gaps = []
    sd_gaps = []
    picks = []
    for rec in pool:
        gaps = [abs(a - b) for a, b in zip(rec.cells, generator.cells)]
        count_gaps.append(max(gaps))
        if mode == IMPUTATION:
            assert stats is not None
            mu = [stats.means[p] for p in rec.positions()]
            mu_gen = [stats.means[p] for p in gen_pos]
            sd = [stats.sds[p] for p in rec.positions()]
            sd_gen = [stats.sds[p] for p in gen_pos]
            mean_gaps.append(max(abs(a - b) for a, b in zip(mu, mu_gen)))
            sd_gaps.append(max(abs(a - b) for a, b in zip(sd, sd_gen)))
        else:
            mean_gaps.append(0.0)
            sd_gaps.append(0.0)
    return _assemble_candidates(pool, count_gaps, mean_gaps, sd_gaps, mode, _gen_anchor(generator))


def _gen_anchor(generator: OddsRatioRecord) -> float:
    # The generator cell is the smallest of the generator ratio's cells;
    # the interchangeable pick compares against that value.
    return min(generator.cells)


def _assemble_candidates(
    pool: Sequence[OddsRatioRecord],
    count_gaps: list[float],
    mean_gaps: list[float],
    sd_gaps: list[float],
    mode: str,
    anchor_value: float,
    exclude: Optional[tuple[int, int]] = None,
) -> list[CandidateDistance]:
    if mode == IMPUTATION:
        sc = list(zip(_minmax_scale(count_gaps), _minmax_scale(mean_gaps), _minmax_scale(sd_gaps)))
        distances = [sum(parts) for parts in sc]
        scaled: list[Optional[tuple[float, float, float]]] = [tuple(parts) for parts in sc]  # type: ignore[misc]
    else:
        distances = list(count_gaps)
        scaled = [None] * len(pool)
    out = []
    for rec, cg, mg, sg, s, dist in zip(pool, count_gaps, mean_gaps, sd_gaps, scaled, distances):
        pos, value, _ = _interchangeable(rec, anchor_value, exclude=exclude)
        out.append(
            CandidateDistance(
                record=rec,
                count_gap=cg,
                mean_gap=mg,
                sd_gap=sg,
                scaled=s,
                distance=dist,
                cell=pos,
                cell_value=value,
            )
        )
    out.sort(key=lambda c: (c.distance, c.record.abs_log_odds, c.record.i, c.record.k, c.record.j, c.record.l))
    return out


def _straggler_candidates(
    containing: Sequence[OddsRatioRecord],
    anchor: tuple[int, int],
    anchor_value: float,
    mode: str,
    stats: Optional[CellStats],
) -> list[CandidateDistance]:
    """Distance ranking for the cleanup pass, anchored at a single cell.

    With a cell anchor the ratio-vs-ratio positionwise maximum is undefined,
    so each component is the absolute gap between the candidate's
    value-closest member and the anchor cell itself.
    """
    if not containing:
        return []
    count_gaps = []
    mean_gaps = []
    sd_gaps = []
    for rec in containing:
        pos, value, gap = _interchangeable(rec, anchor_value, exclude=anchor)
        count_gaps.append(gap)
        if mode == IMPUTATION:
            assert stats is not None
            mean_gaps.append(abs(stats.means[pos] - stats.means[anchor]))
            sd_gaps.append(abs(stats.sds[pos] - stats.sds[anchor]))
        else:
            mean_gaps.append(0.0)
            sd_gaps.append(0.0)
    return _assemble_candidates(containing, count_gaps, mean_gaps, sd_gaps, mode, anchor_value, exclude=anchor)


@dataclass(frozen=True)
class Cluster:
    """One aggregation group: a negative label and its member cells in
    assignment order (the seed cell first)."""

    label: int
    members: tuple[tuple[int, int], ...]
    total: float
    undersized: bool
    straggler: bool


@dataclass(frozen=True)
class ClusterMap:
    """Disjoint clusters plus the cells the run left alone."""

    shape: tuple[int, int]
    clusters: tuple[Cluster, ...]
    untouched: tuple[tuple[int, int], ...]
    empty: tuple[tuple[int, int], ...]
    flagged_singletons: tuple[tuple[int, int], ...]

    def labels(self) -> np.ndarray:
        """(m, n) grid of cluster labels, 0 for unassigned cells."""
        grid = np.zeros(self.shape, dtype=int)
        for cluster in self.clusters:
            for r, c in cluster.members:
                grid[r, c] = cluster.label
        return grid

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


@dataclass(frozen=True)
class StepRecord:
    """Audit entry for one cluster-forming step."""

    step: int
    threshold: float
    generator: Optional[OddsRatioRecord]
    generator_cell: tuple[int, int]
    generator_value: float
    pool_size: int
    assigned: tuple[tuple[tuple[int, int], float], ...]
    closing_reason: str
    straggler: bool


@dataclass(frozen=True)
class AggregationTrace:
    steps: tuple[StepRecord, ...]
    stop_reason: str
    straggler_steps: tuple[StepRecord, ...]


@dataclass
class _RunState:
    values: np.ndarray
    config: IlocaConfig
    stats: Optional[CellStats]
    clusters: list[Cluster] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    straggler_steps: list[StepRecord] = field(default_factory=list)
    flagged: list[tuple[int, int]] = field(default_factory=list)

    def next_label(self) -> int:
        return -(len(self.clusters) + 1)


def _grow_cluster(
    state: _RunState,
    seed: tuple[int, int],
    seed_value: float,
    candidates: list[CandidateDistance],
    threshold: float,
    straggler: bool,
) -> tuple[Cluster, tuple[tuple[tuple[int, int], float], ...], str]:
    """Colour the seed, then absorb candidates until the size target is met.

    A candidate is skipped when its cell is no longer active (already
    assigned or the seed itself) or when its count is at or above the
    threshold: large cells are never absorbed.
    """
    label = state.next_label()
    values = state.values
    members = [seed]
    assigned = [(seed, seed_value)]
    values[seed] = label
    total = seed_value
    reason = CLOSE_POOL_EXHAUSTED
    if total > threshold:
        reason = CLOSE_THRESHOLD_MET
    else:
        for cand in candidates:
            if values[cand.cell] <= 0:
                continue
            if cand.cell_value >= threshold:
                continue
            values[cand.cell] = label
            members.append(cand.cell)
            assigned.append((cand.cell, cand.cell_value))
            total += cand.cell_value
            if total > threshold:
                reason = CLOSE_THRESHOLD_MET
                break
    cluster = Cluster(
        label=label,
        members=tuple(members),
        total=total,
        undersized=reason != CLOSE_THRESHOLD_MET,
        straggler=straggler,
    )
    state.clusters.append(cluster)
    return cluster, tuple(assigned), reason


def _finalize_map(state: _RunState) -> ClusterMap:
    values = state.values
    untouched = tuple((int(r), int(c)) for r, c in np.argwhere(values > 0))
    empty = tuple((int(r), int(c)) for r, c in np.argwhere(values == 0))
    return ClusterMap(
        shape=values.shape,  # type: ignore[arg-type]
        clusters=tuple(state.clusters),
        untouched=untouched,
        empty=empty,
        flagged_singletons=tuple(state.flagged),
    )


def run_iloca(
    table: ContingencyTable,
    config: Optional[IlocaConfig] = None,
    stats: Optional[CellStats] = None,
) -> tuple[ClusterMap, AggregationTrace]:
    """Run the full aggregation: main loop plus the straggler cleanup pass.

    ``stats`` is required in imputation mode and ignored in frequency mode,
    which makes frequency-mode results independent of any response data.
    The run is deterministic in its inputs.
    """
    config = config or IlocaConfig()
    config.validate()
    if config.mode == IMPUTATION and stats is None:
        raise InvalidParameterError("imputation mode requires cell statistics")
    if (np.asarray(table.values) < 0).any():
        raise InvalidParameterError("table already carries assigned cells")
    state = _RunState(values=table.values.astype(float).copy(), config=config, stats=stats)
    m, n = state.values.shape
    stats_used = stats if config.mode == IMPUTATION else None

    stop_reason = STOP_STEP_LIMIT
    step = 1
    while step <= config.max_steps:
        active = state.values > 0
        active_count = int(active.sum())
        if active_count == 0:
            stop_reason = STOP_NO_SMALL_CELLS
            break
        threshold = (
            relaxed_threshold(config.min_cell_size, m, n, active_count, step)
            if config.relaxation
            else config.min_cell_size
        )
        if not (active & (state.values < threshold)).any():
            stop_reason = STOP_NO_SMALL_CELLS
            break
        records = log_odds_records(state.values)
        if not records:
            stop_reason = STOP_NO_QUALIFYING_RATIO
            break
        records.sort(key=OddsRatioRecord.sort_key)
        picked = select_generator(records, threshold)
        if picked is None:
            stop_reason = STOP_NO_QUALIFYING_RATIO
            break
        generator, gen_cell, gen_value = picked
        # Pool = ratios ranked 2..k by |log-odds| (k-proportion of the
        # current ratio count, never fewer than rank 2).
        k_rank = max(2, math.ceil(config.k_proportion * len(records)))
        pool = candidate_distances(
            [rec for rec in records if rec is not generator],
            generator,
            k_rank - 1,
            mode=config.mode,
            stats=stats_used,
        )
        _, assigned, reason = _grow_cluster(state, gen_cell, gen_value, pool, threshold, straggler=False)
        state.steps.append(
            StepRecord(
                step=step,
                threshold=threshold,
                generator=generator,
                generator_cell=gen_cell,
                generator_value=gen_value,
                pool_size=len(pool),
                assigned=assigned,
                closing_reason=reason,
                straggler=False,
            )
        )
        step += 1

    _straggler_pass(state)
    trace = AggregationTrace(
        steps=tuple(state.steps),
        stop_reason=stop_reason,
        straggler_steps=tuple(state.straggler_steps),
    )
    return _finalize_map(state), trace


def _straggler_pass(state: _RunState) -> None:
    """Cleanup pass over remaining active cells below the base size.

    Each such cell (row-major order) seeds a new cluster; its candidates are
    the current ratios containing it.  Cells with no available ratio stay
    untouched and are flagged as under-sized singletons.
    """
    config = state.config
    values = state.values
    m, n = values.shape
    stats_used = state.stats if config.mode == IMPUTATION else None
    base = config.min_cell_size
    for r in range(m):
        for c in range(n):
            value = values[r, c]
            if not (0 < value < base):
                continue
            records = log_odds_records(values)
            containing = [rec for rec in records if (r, c) in rec.positions()]
            if not containing:
                if (r, c) not in state.flagged:
                    state.flagged.append((r, c))
                continue
            containing.sort(key=OddsRatioRecord.sort_key)
            pool = _straggler_candidates(containing, (r, c), float(value), config.mode, stats_used)
            _, assigned, reason = _grow_cluster(state, (r, c), float(value), pool, base, straggler=True)
            state.straggler_steps.append(
                StepRecord(
                    step=len(state.clusters),
                    threshold=base,
                    generator=None,
                    generator_cell=(r, c),
                    generator_value=float(value),
                    pool_size=len(pool),
                    assigned=assigned,
                    closing_reason=reason,
                    straggler=True,
                )
            )


def assign_stragglers(
    table: ContingencyTable,
    cluster_map: ClusterMap,
    config: Optional[IlocaConfig] = None,
    stats: Optional[CellStats] = None,
) -> tuple[ClusterMap, tuple[StepRecord, ...]]:
    """Run the cleanup pass against an existing cluster map.

    Overlays the map's assignments onto the table, sweeps remaining small
    active cells, and returns the updated map plus the new trace entries.
    ``run_iloca`` already includes this pass; the standalone form exists for
    resuming or auditing a finished main loop.
    """
    config = config or IlocaConfig()
    config.validate()
    if config.mode == IMPUTATION and stats is None:
        raise InvalidParameterError("imputation mode requires cell statistics")
    values = table.values.astype(float).copy()
    for cluster in cluster_map.clusters:
        for pos in cluster.members:
            values[pos] = cluster.label
    state = _RunState(
        values=values,
        config=config,
        stats=stats,
        clusters=list(cluster_map.clusters),
        flagged=list(cluster_map.flagged_singletons),
    )
    _straggler_pass(state)
    return _finalize_map(state), tuple(state.straggler_steps)
