"""Imputation-cell construction for two-way contingency tables.

The package clusters small-count cells of a two-way classification into
aggregation groups using near-zero log-odds ratios, so that the dependence
structure of the table survives the merge, then applies cell-mean
imputation within the resulting groups.  Seeded simulation studies measure
the clustering behaviour and the bias of the imputed overall mean.
"""

__version__ = "0.1.0"

from .engine import (
    AggregationTrace,
    CandidateDistance,
    CellStats,
    Cluster,
    ClusterMap,
    FREQUENCY,
    IMPUTATION,
    IlocaConfig,
    StepRecord,
    assign_stragglers,
    candidate_distances,
    relaxed_threshold,
    run_iloca,
    select_generator,
)
from .errors import (
    DegenerateDataError,
    IlocaError,
    InvalidParameterError,
    MalformedInputError,
    SingularDesignError,
)
from .imputation import (
    EstimatorResult,
    ImputationCells,
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
)
from .simgen import (
    ClusteringStudyReport,
    DgpConfig,
    MetricsReport,
    ReplicateOutput,
    ResponseModelConfig,
    SimulationSetting,
    calibrate_intercept,
    dgp1_config,
    dgp2_config,
    draw_response_indicators,
    gen_dgp1,
    gen_dgp2,
    gen_kass_table,
    gen_replicate,
    response_model_config,
    response_probabilities,
    rng_for,
    run_clustering_study,
    run_simulation_study,
    simulation_setting,
)
from .table import (
    AlthamSummary,
    BlockProfile,
    CellState,
    ContingencyTable,
    OddsRatioRecord,
    altham_hack,
    altham_index,
    central_peak_profile,
    chi_square_independence,
    enumerate_log_odds,
)

__all__ = [name for name in dir() if not name.startswith("_")]
