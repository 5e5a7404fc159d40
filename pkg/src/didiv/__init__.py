"""TWFEIV estimation on staggered-instrument panels and its exact
decomposition into weighted 2x2 Wald-DID components."""

from .comparison import (
    BetweenCellReport,
    ComponentVector,
    CovariateSplit,
    SpecComparison,
    between_cells,
    component_vectors,
    covariate_split,
    covariate_vectors,
    oaxaca,
    pair_vectors,
)
from .decomposition import (
    DecompositionResult,
    DesignCell,
    DesignKind,
    TwoCohortEstimate,
    UnbalancedWeightReport,
    WaldDIDComponent,
    cell_variance,
    decompose,
    enumerate_cells,
    two_cohort_estimate,
    unbalanced_weights,
    wald_did,
)
from .errors import (
    CollinearCovariates,
    ConvergenceFailure,
    DegenerateWeights,
    DidivError,
    DuplicateCell,
    EmptyCell,
    IncompatibleSpecs,
    IncompleteSchedule,
    InvalidInstrument,
    MissingControl,
    NoVariation,
    NotBalanced,
    NotStaggered,
    OracleDegenerate,
    OracleSingular,
    SchemaError,
    WeakDenominator,
)
from .estimators import (
    CovariateIVEstimate,
    IVEstimate,
    dummy_regression_oracle,
    twfeiv,
    twfeiv_covariates,
    twfeiv_weighted,
)
from .panel import (
    NEVER,
    CohortPartition,
    PanelDataset,
    TimeWindow,
    double_demean,
    infer_cohorts,
    load_panel,
    residualize_two_way,
    weighted_double_demean,
    window_mean,
)
from .simulation import (
    DgpConfig,
    EstimandOracle,
    MonteCarloSummary,
    generate,
    monte_carlo,
    oracle_estimand,
    preset,
)

__version__ = "0.1.0"

__all__ = [
    "NEVER",
    "BetweenCellReport",
    "CohortPartition",
    "CollinearCovariates",
    "ComponentVector",
    "ConvergenceFailure",
    "CovariateIVEstimate",
    "CovariateSplit",
    "DecompositionResult",
    "DegenerateWeights",
    "DesignCell",
    "DesignKind",
    "DgpConfig",
    "DidivError",
    "DuplicateCell",
    "EmptyCell",
    "EstimandOracle",
    "IVEstimate",
    "IncompatibleSpecs",
    "IncompleteSchedule",
    "InvalidInstrument",
    "MissingControl",
    "MonteCarloSummary",
    "NoVariation",
    "NotBalanced",
    "NotStaggered",
    "OracleDegenerate",
    "OracleSingular",
    "PanelDataset",
    "SchemaError",
    "SpecComparison",
    "TimeWindow",
    "TwoCohortEstimate",
    "UnbalancedWeightReport",
    "WaldDIDComponent",
    "WeakDenominator",
    "between_cells",
    "cell_variance",
    "component_vectors",
    "covariate_split",
    "covariate_vectors",
    "decompose",
    "double_demean",
    "dummy_regression_oracle",
    "enumerate_cells",
    "generate",
    "infer_cohorts",
    "load_panel",
    "monte_carlo",
    "oaxaca",
    "oracle_estimand",
    "pair_vectors",
    "preset",
    "residualize_two_way",
    "twfeiv",
    "twfeiv_covariates",
    "twfeiv_weighted",
    "two_cohort_estimate",
    "unbalanced_weights",
    "wald_did",
    "weighted_double_demean",
    "window_mean",
]
