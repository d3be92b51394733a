"""Seeded generators for the clustering and imputation studies.

Replicates are reproducible: replicate k of a study draws from a fresh
numpy Generator seeded with SeedSequence((master_seed, k)).  Within one
replicate the draw order is fixed: the record-level uniform (or
exponential) variates first, then any auxiliary law draws, then the noise
vector, then the response-indicator Bernoulli draws.

Two data generating processes are supported.  Process 1 is rank based: a
uniform variate u drives both the response y = u**(5/4) and the column
classification; rows cycle deterministically.  Process 2 is a quadratic
regression on exponential auxiliaries, classified into five classes each by
empirical quantile breaks.  Two response models produce missingness:
model 1 (ignorable) depends on auxiliaries only, model 2 (non-ignorable)
includes the response itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .engine import CellStats, IlocaConfig, IMPUTATION, run_iloca
from .errors import InvalidParameterError
from .imputation import (
    SurveyDataset,
    atomic_cells,
    atomic_table,
    build_imputation_cells,
    cell_mean_impute,
    deterministic_regression_impute,
    null_cells,
    quantile_cells_impute,
    relative_bias,
    rrmse,
)
from .table import ContingencyTable, altham_hack, altham_index, chi_square_independence, enumerate_log_odds

__all__ = [
    "DgpConfig",
    "ResponseModelConfig",
    "ReplicateOutput",
    "SimulationSetting",
    "MetricsReport",
    "ClusteringStudyReport",
    "rng_for",
    "gen_kass_table",
    "gen_dgp1",
    "gen_dgp2",
    "response_probabilities",
    "calibrate_intercept",
    "draw_response_indicators",
    "gen_replicate",
    "run_simulation_study",
    "run_clustering_study",
    "QUANTILE_SWEEP",
]

QUANTILE_SWEEP = (5, 10, 15, 20, 25, 30, 35)

# Response-model parameters keyed by (dgp, response_model, rate).
RESPONSE_PARAMS: dict[tuple[int, int, float], tuple[float, float, float]] = {
    (1, 1, 0.75): (0.05, 0.22, 0.05),
    (1, 1, 0.50): (0.05, -0.05, 0.05),
    (1, 2, 0.75): (0.05, 1.00, 0.30),
    (1, 2, 0.50): (0.05, 1.00, -0.15),
    (2, 1, 0.75): (1.00, 0.50, 0.10),
    (2, 1, 0.50): (1.00, -12.00, -100.00),
    (2, 2, 0.75): (0.10, 0.04, 0.05),
    (2, 2, 0.50): (0.10, 0.08, -200.00),
}


def rng_for(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for one unit of work under a master seed."""
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(p) for p in path)))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class DgpConfig:
    """Data-generating-process settings.

    ``kind`` is 1 (rank based, 8x5 classes) or 2 (regression on exponential
    auxiliaries, 5x5 classes).  ``class_breaks`` are the interior cumulative
    proportions of the empirical quantile classification used by kind 2.
    """

    kind: int = 1
    n: int = 480
    rows: int = 8
    cols: int = 5
    misspec: bool = False
    beta: tuple[float, float, float, float] = (20.0, 10.0, 0.5, 10.0)
    noise_sd: float = math.sqrt(200.0)
    exp_mean: float = 100.0
    class_breaks: tuple[float, ...] = (0.04, 0.10, 0.15, 0.20)
    # The stock response-model slopes for this process assume covariates on
    # a much smaller scale than Exponential(mean 100) auxiliaries produce:
    # applied raw they saturate the logistic into a near-deterministic
    # selection rule.  The linear term is therefore divided by this scale,
    # set so the stock non-ignorable parameters induce strong but
    # non-degenerate selection on the response (about a 25% respondent-mean
    # bias at the 50% rate) rather than a saturated indicator.
    response_covariate_scale: float = 120000.0

    def validate(self) -> None:
        if self.kind not in (1, 2):
            raise InvalidParameterError("kind must be 1 or 2")
        if self.rows < 2 or self.cols < 2:
            raise InvalidParameterError("class dimensions must be at least 2")
        if self.n < self.rows * self.cols:
            raise InvalidParameterError("need at least one record per atomic cell on average")
        if not self.response_covariate_scale > 0:
            raise InvalidParameterError("response covariate scale must be positive")
        breaks = self.class_breaks
        if any(b <= 0 or b >= 1 for b in breaks) or list(breaks) != sorted(set(breaks)):
            raise InvalidParameterError("class breaks must be strictly increasing in (0, 1)")


def dgp1_config(misspec: bool = False, **kwargs) -> DgpConfig:
    return DgpConfig(kind=1, rows=8, cols=5, misspec=misspec, **kwargs)


def dgp2_config(misspec: bool = False, **kwargs) -> DgpConfig:
    return DgpConfig(kind=2, rows=5, cols=5, misspec=misspec, **kwargs)


@dataclass(frozen=True)
class ResponseModelConfig:
    """Logistic response-model parameters and calibration policy."""

    kind: int
    lam0: float
    lam1: float
    lam2: float
    target_rate: float
    calibrate: bool

    def validate(self) -> None:
        if self.kind not in (1, 2):
            raise InvalidParameterError("response model kind must be 1 or 2")
        if not 0 < self.target_rate < 1:
            raise InvalidParameterError("target rate must be in (0, 1)")


def response_model_config(
    dgp: int, kind: int, rate: float, calibrate: Optional[bool] = None
) -> ResponseModelConfig:
    """Default parameters for a study setting.

    Calibration defaults off for process 1 (the stock parameters hit their
    target rates) and on for process 2 (they do not).
    """
    key = (dgp, kind, round(rate, 2))
    if key not in RESPONSE_PARAMS:
        raise InvalidParameterError(f"no stock parameters for setting {key}")
    lam0, lam1, lam2 = RESPONSE_PARAMS[key]
    if calibrate is None:
        calibrate = dgp == 2
    return ResponseModelConfig(
        kind=kind, lam0=lam0, lam1=lam1, lam2=lam2, target_rate=rate, calibrate=calibrate
    )


@dataclass(frozen=True, eq=False)
class ReplicateOutput:
    """One generated survey dataset with its atomic table and truth."""

    dataset: SurveyDataset
    table: ContingencyTable
    true_mean: float
    response_rate: float


def gen_kass_table(
    n: int, rows: int, cols: int, column_law: str, seed
) -> tuple[np.ndarray, np.ndarray, ContingencyTable]:
    """Cyclic-row, random-column classification of n records.

    The row label cycles 1..rows with record index (index multiples of
    ``rows`` wrap to ``rows``).  Under the uniform law the column label is
    int(1 + cols*u); under the lognormal law it is int(mod(1 + u, cols))
    with u lognormal(0, 2) and the value 0 wrapping to ``cols``.
    """
    if column_law not in ("uniform", "lognormal"):
        raise InvalidParameterError(f"unknown column law: {column_law!r}")
    rng = _as_rng(seed)
    t = np.arange(1, n + 1)
    z1 = np.mod(t, rows)
    z1[z1 == 0] = rows
    if column_law == "uniform":
        u = rng.random(n)
        z2 = (1 + cols * u).astype(int)
    else:
        u = rng.lognormal(mean=0.0, sigma=2.0, size=n)
        z2 = np.mod(1.0 + u, cols).astype(int)
        z2[z2 == 0] = cols
    counts = np.zeros((rows, cols))
    np.add.at(counts, (z1 - 1, z2 - 1), 1.0)
    return z1, z2, ContingencyTable.from_counts(counts)


def _quantile_classes(values: np.ndarray, breaks: Sequence[float]) -> np.ndarray:
    """1-based class labels from empirical quantile breaks; every class is
    non-empty by construction."""
    cuts = np.quantile(values, list(breaks))
    return (np.searchsorted(cuts, values, side="left") + 1).astype(int)


def gen_dgp1(n: int, rows: int, cols: int, misspec: bool, seed) -> ReplicateOutput:
    """Rank-based generating process.

    One uniform draw per record powers the response (y = u**(5/4)) and the
    column class (the fifth of [0,1) that u falls in).  Under
    mis-specification the column class used for cells is replaced by an
    independent lognormal-law label while the response and the auxiliary
    values keep their uniform-derived definitions, so the analyst's cell
    structure no longer explains the response.
    """
    rng = _as_rng(seed)
    t = np.arange(1, n + 1)
    z1 = np.mod(t, rows)
    z1[z1 == 0] = rows
    u = rng.random(n)
    z2 = (1 + cols * u).astype(int)
    if misspec:
        v = rng.lognormal(mean=0.0, sigma=2.0, size=n)
        z2c = np.mod(1.0 + v, cols).astype(int)
        z2c[z2c == 0] = cols
    else:
        z2c = z2
    y = u ** 1.25
    dataset = SurveyDataset(
        ids=t.copy(),
        y=y,
        r=np.ones(n, dtype=int),
        z1c=z1.copy(),
        z2c=z2c,
        z1=z1.astype(float),
        z2=z2.astype(float),
    )
    table = atomic_table(dataset, rows, cols)
    return ReplicateOutput(dataset=dataset, table=table, true_mean=float(y.mean()), response_rate=1.0)


def gen_dgp2(n: int, misspec: bool, seed, config: Optional[DgpConfig] = None) -> ReplicateOutput:
    """Regression generating process on exponential auxiliaries.

    y = b0 + b1*z1 + b2*z2 + b3*z1^2 + noise.  The row classification cuts
    z1 + z1^2 (just z1 under mis-specification) at the configured empirical
    quantile breaks; the column classification cuts z2 the same way.
    """
    config = config or dgp2_config(misspec=misspec, n=n)
    config.validate()
    rng = _as_rng(seed)
    z1 = rng.exponential(config.exp_mean, n)
    z2 = rng.exponential(config.exp_mean, n)
    z3 = rng.exponential(config.exp_mean, n)
    eps = rng.normal(0.0, config.noise_sd, n)
    b0, b1, b2, b3 = config.beta
    y = b0 + b1 * z1 + b2 * z2 + b3 * z1**2 + eps
    z1_star = z1 if misspec else z1 + z1**2
    z1c = _quantile_classes(z1_star, config.class_breaks)
    z2c = _quantile_classes(z2, config.class_breaks)
    dataset = SurveyDataset(
        ids=np.arange(1, n + 1),
        y=y,
        r=np.ones(n, dtype=int),
        z1c=z1c,
        z2c=z2c,
        z1=z1,
        z2=z2,
        z3=z3,
    )
    n_classes = len(config.class_breaks) + 1
    table = atomic_table(dataset, n_classes, n_classes)
    return ReplicateOutput(dataset=dataset, table=table, true_mean=float(y.mean()), response_rate=1.0)


def _response_covariates(
    dataset: SurveyDataset, rm_kind: int, dgp: DgpConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Covariate pair feeding the logistic response model.

    Process 1 uses its class-scale auxiliaries directly.  Process 2's
    covariates are divided by the configured response covariate scale (see
    :class:`DgpConfig`).
    """
    if dgp.kind == 1:
        if rm_kind == 1:
            x1, x2 = dataset.z1, dataset.z2
        else:
            # Process 1 carries no third auxiliary; the second one stands in.
            x1, x2 = dataset.y, dataset.z2
    else:
        if dataset.z3 is None:
            raise InvalidParameterError("response model needs z3 for this process")
        scale = dgp.response_covariate_scale
        x1 = (dataset.z1 if rm_kind == 1 else dataset.y) / scale
        x2 = dataset.z3 / scale
    if x1 is None or x2 is None:
        raise InvalidParameterError("response model covariates missing from dataset")
    return np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)


def _logistic(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def response_probabilities(
    dataset: SurveyDataset, rm: ResponseModelConfig, dgp: DgpConfig
) -> np.ndarray:
    """Per-record response probabilities under the logistic model."""
    rm.validate()
    x1, x2 = _response_covariates(dataset, rm.kind, dgp)
    logit = rm.lam0 + rm.lam1 * x1 + rm.lam2 * x2
    return _logistic(logit)


def calibrate_intercept(
    dataset: SurveyDataset,
    rm: ResponseModelConfig,
    dgp: DgpConfig,
    tolerance: float = 0.005,
    max_iter: int = 200,
) -> tuple[float, float]:
    """Bisect the intercept until the mean response probability hits the
    target rate.  Returns (adjusted intercept, realized mean probability).

    The mean probability is monotone increasing in the intercept, so a
    bracket always exists and bisection converges.
    """
    rm.validate()
    x1, x2 = _response_covariates(dataset, rm.kind, dgp)
    slope = rm.lam1 * x1 + rm.lam2 * x2

    def mean_p(lam0: float) -> float:
        return float(_logistic(lam0 + slope).mean())

    target = rm.target_rate
    lo = hi = rm.lam0
    step = 1.0
    while mean_p(lo) > target:
        lo -= step
        step *= 2
    step = 1.0
    while mean_p(hi) < target:
        hi += step
        step *= 2
    best = (abs(mean_p(rm.lam0) - target), rm.lam0)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        value = mean_p(mid)
        gap = abs(value - target)
        if gap < best[0]:
            best = (gap, mid)
        if gap <= tolerance:
            return mid, value
        if value < target:
            lo = mid
        else:
            hi = mid
    lam0 = best[1]
    return lam0, mean_p(lam0)


def draw_response_indicators(p: np.ndarray, seed) -> np.ndarray:
    """Independent Bernoulli response indicators, one per record in order.

    Probabilities are logistic values in (0, 1); extreme logits may round
    to the float boundaries, which is accepted.
    """
    p = np.asarray(p, dtype=float)
    if not np.isfinite(p).all() or ((p < 0) | (p > 1)).any():
        raise InvalidParameterError("response probabilities must lie in (0, 1)")
    rng = _as_rng(seed)
    return (rng.random(len(p)) < p).astype(int)


def gen_replicate(
    dgp: DgpConfig, rm: ResponseModelConfig, seed
) -> tuple[ReplicateOutput, float]:
    """Generate one survey replicate with missingness applied.

    Returns the replicate and the calibrated intercept actually used (the
    stock intercept when calibration is off).
    """
    dgp.validate()
    rm.validate()
    rng = _as_rng(seed)
    if dgp.kind == 1:
        rep = gen_dgp1(dgp.n, dgp.rows, dgp.cols, dgp.misspec, rng)
    else:
        rep = gen_dgp2(dgp.n, dgp.misspec, rng, config=dgp)
    lam0 = rm.lam0
    if rm.calibrate:
        lam0, _ = calibrate_intercept(rep.dataset, rm, dgp)
        rm = replace(rm, lam0=lam0)
    p = response_probabilities(rep.dataset, rm, dgp)
    r = draw_response_indicators(p, rng)
    dataset = replace(rep.dataset, r=r)
    return (
        ReplicateOutput(
            dataset=dataset,
            table=rep.table,
            true_mean=rep.true_mean,
            response_rate=float(r.mean()),
        ),
        lam0,
    )


@dataclass(frozen=True)
class SimulationSetting:
    """One imputation-study setting: a generating process, a response model
    and the engine configuration applied to each replicate."""

    dgp: DgpConfig
    rm: ResponseModelConfig
    engine: IlocaConfig = IlocaConfig(mode=IMPUTATION)
    quantile_sweep: tuple[int, ...] = QUANTILE_SWEEP


def simulation_setting(
    dgp: int,
    response_model: int,
    rate: float,
    misspec: bool = False,
    calibrate: Optional[bool] = None,
    n: int = 480,
) -> SimulationSetting:
    d = dgp1_config(misspec=misspec, n=n) if dgp == 1 else dgp2_config(misspec=misspec, n=n)
    r = response_model_config(dgp, response_model, rate, calibrate)
    return SimulationSetting(dgp=d, rm=r)


@dataclass(frozen=True, eq=False)
class MetricsReport:
    """Per-structure relative bias / RRMSE over a replicate set."""

    setting: SimulationSetting
    replicates: int
    estimates: dict[str, np.ndarray]
    truths: np.ndarray
    rb: dict[str, float]
    rrmse: dict[str, float]
    mean_iloca_cells: float
    mean_realized_rate: float
    fallback_cells: dict[str, float]

    def structures(self) -> list[str]:
        return list(self.rb)


def run_simulation_study(setting: SimulationSetting, reps: int, seed: int) -> MetricsReport:
    """Monte Carlo imputation study over one setting.

    Each replicate: generate data, draw missingness, aggregate the atomic
    table in imputation mode (statistics from respondents only, table from
    all records), then impute under every structure and baseline.
    """
    if reps < 1:
        raise InvalidParameterError("need at least one replicate")
    setting.engine.validate()
    m, n = setting.dgp.rows, setting.dgp.cols
    names = ["iloca", "null", "atomic", "regression"] + [f"quantile_{q}" for q in setting.quantile_sweep]
    estimates: dict[str, list[float]] = {name: [] for name in names}
    fallback: dict[str, list[float]] = {name: [] for name in names}
    truths: list[float] = []
    cell_counts: list[float] = []
    rates: list[float] = []
    for k in range(reps):
        rep, _ = gen_replicate(setting.dgp, setting.rm, rng_for(seed, k))
        ds = rep.dataset
        truths.append(rep.true_mean)
        rates.append(rep.response_rate)
        stats = CellStats.from_dataset(ds, m, n)
        cluster_map, _ = run_iloca(rep.table, setting.engine, stats)
        iloca_cells = build_imputation_cells(cluster_map, rep.table)
        # Structural cell count of the aggregated table: clusters plus
        # untouched active cells plus empty atomic cells, i.e. how many
        # cells the coloured table has after merging.
        cell_counts.append(iloca_cells.n_cells + len(cluster_map.empty))
        results = {
            "iloca": cell_mean_impute(ds, iloca_cells),
            "null": cell_mean_impute(ds, null_cells(m, n)),
            "atomic": cell_mean_impute(ds, atomic_cells(m, n)),
            "regression": deterministic_regression_impute(ds, setting.dgp.kind),
        }
        for q in setting.quantile_sweep:
            results[f"quantile_{q}"] = quantile_cells_impute(ds, q)
        for name, res in results.items():
            estimates[name].append(res.imputed_mean)
            fallback[name].append(res.fallback_cells)
    truths_arr = np.asarray(truths)
    est_arrays = {name: np.asarray(vals) for name, vals in estimates.items()}
    pairs = {name: list(zip(vals, truths_arr)) for name, vals in est_arrays.items()}
    return MetricsReport(
        setting=setting,
        replicates=reps,
        estimates=est_arrays,
        truths=truths_arr,
        rb={name: relative_bias(p) for name, p in pairs.items()},
        rrmse={name: rrmse(p) for name, p in pairs.items()},
        mean_iloca_cells=float(np.mean(cell_counts)),
        mean_realized_rate=float(np.mean(rates)),
        fallback_cells={name: float(np.mean(vals)) for name, vals in fallback.items()},
    )


@dataclass(frozen=True, eq=False)
class ClusteringStudyReport:
    """Replicated frequency-mode aggregation of generated tables.

    Clusters that close by clearing the size threshold are reported apart
    from pool-exhausted (under-sized, flagged) ones: the completed groups
    carry the aggregation behaviour, the flagged ones are leftovers.
    """

    column_law: str
    rows: int
    cols: int
    replicates: int
    chi2_pass_count: int
    colour_member_means: dict[int, float]
    colour_present_counts: dict[int, int]
    mean_cluster_count: float
    mean_completed_clusters: float
    completed_member_mean: float
    altham_original: np.ndarray
    altham_aggregated: np.ndarray
    retention_mean: float
    retention_of_means: float
    dominant_column_untouched: int

    @property
    def mean_members_overall(self) -> float:
        total = sum(self.colour_member_means[c] * self.colour_present_counts[c] for c in self.colour_member_means)
        weight = sum(self.colour_present_counts.values())
        return total / weight if weight else 0.0


def run_clustering_study(
    column_law: str,
    rows: int,
    cols: int,
    reps: int,
    seed: int,
    n: int = 480,
    config: Optional[IlocaConfig] = None,
) -> ClusteringStudyReport:
    """Generate tables, aggregate them in frequency mode, and summarize.

    Reports the per-colour average member count (over replicates where the
    colour appears), the chi-square non-significance count at the 5% level,
    the before/after dependence indices, and how often all large cells of
    the dominant column survive untouched.
    """
    if reps < 1:
        raise InvalidParameterError("need at least one replicate")
    config = config or IlocaConfig()
    config.validate()
    member_sums: dict[int, float] = {}
    member_hits: dict[int, int] = {}
    cluster_counts = []
    completed_counts = []
    completed_sizes: list[int] = []
    altham_orig = []
    altham_agg = []
    ratios = []
    chi2_pass = 0
    dominant_untouched = 0
    for k in range(reps):
        rng = rng_for(seed, k)
        _, _, table = gen_kass_table(n, rows, cols, column_law, rng)
        _, _, p_value = chi_square_independence(table)
        if p_value > 0.05:
            chi2_pass += 1
        cluster_map, _ = run_iloca(table, config)
        cluster_counts.append(cluster_map.n_clusters)
        completed = [c for c in cluster_map.clusters if not c.undersized]
        completed_counts.append(len(completed))
        completed_sizes += [len(c.members) for c in completed]
        for cluster in cluster_map.clusters:
            member_sums[cluster.label] = member_sums.get(cluster.label, 0.0) + len(cluster.members)
            member_hits[cluster.label] = member_hits.get(cluster.label, 0) + 1
        original = altham_index(enumerate_log_odds(table))
        aggregated = altham_hack(table, cluster_map)
        altham_orig.append(original.total)
        altham_agg.append(aggregated.total)
        if original.total > 0:
            ratios.append(aggregated.total / original.total)
        dominant = int(np.argmax(table.col_totals))
        labels = cluster_map.labels()
        large = table.values[:, dominant] >= config.min_cell_size
        if (labels[:, dominant][large] == 0).all():
            dominant_untouched += 1
    return ClusteringStudyReport(
        column_law=column_law,
        rows=rows,
        cols=cols,
        replicates=reps,
        chi2_pass_count=chi2_pass,
        colour_member_means={c: member_sums[c] / member_hits[c] for c in sorted(member_sums, reverse=True)},
        colour_present_counts={c: member_hits[c] for c in sorted(member_hits, reverse=True)},
        mean_cluster_count=float(np.mean(cluster_counts)),
        mean_completed_clusters=float(np.mean(completed_counts)),
        completed_member_mean=float(np.mean(completed_sizes)) if completed_sizes else 0.0,
        altham_original=np.asarray(altham_orig),
        altham_aggregated=np.asarray(altham_agg),
        retention_mean=float(np.mean(ratios)) if ratios else float("nan"),
        retention_of_means=float(np.mean(altham_agg) / np.mean(altham_orig)) if np.mean(altham_orig) > 0 else float("nan"),
        dominant_column_untouched=dominant_untouched,
    )
