"""
mweight: matching weights for propensity-score analysis.

Public API surface:

    Data:         ObservationalDataset, ingest_csv, dataset_summary
    M-estimation: EstimatingSystem, solve_system, sandwich
    Weights:      fit_logistic, matching_weight(s), att_weight(s), ipw_weight(s),
                  SmoothWeightConfig, effective_sample_sizes
    Estimators:   estimate_mw, estimate_dr_mw, estimate_ipw, estimate_dr_ipw,
                  estimate_ols, estimate_stratified, estimate_matched,
                  plug_in_variance_prop2
    Balance:      balance_test, balance_report, standardized_difference,
                  mirror_histogram, render_mirror_svg
    Simulation:   ScenarioSpec, generate_dataset, run_table1/2/3
    Utilities:    configure, ProjectConfig, dumps
    Errors:       MWeightError and all subclasses
    Trace:        EstimationRecord, all_records, clear_traces
"""

from __future__ import annotations

from .data import (
    INTERCEPT,
    DatasetSummary,
    ObservationalDataset,
    dataset_summary,
    ingest_csv,
)
from .mestimation import EstimatingSystem, SandwichResult, sandwich, solve, solve_system
from .weights import (
    EffectiveSampleSizes,
    PropensityFit,
    SmoothWeightConfig,
    att_weight,
    att_weights,
    effective_sample_sizes,
    fit_logistic,
    ipw_weight,
    ipw_weights,
    matching_weight,
    matching_weights,
    smooth_coefficients,
)
from .estimators import (
    ESTIMATORS,
    EffectEstimate,
    OutcomeModelFit,
    estimate_dr_ipw,
    estimate_dr_mw,
    estimate_ipw,
    estimate_matched,
    estimate_mw,
    estimate_ols,
    estimate_stratified,
    fit_outcome_models,
    plug_in_variance_prop2,
)
from .balance import (
    BalanceReport,
    BalanceResult,
    MirrorHistogram,
    balance_report,
    balance_test,
    mirror_histogram,
    render_mirror_svg,
    standardized_difference,
)
from .simulation import (
    METHODS,
    MethodSummary,
    MonteCarloSummary,
    ScenarioSpec,
    ScenarioSummary,
    format_table1,
    format_table2,
    format_table3,
    generate_dataset,
    run_replicate,
    run_table1,
    run_table2,
    run_table3,
)
from .exceptions import (
    MWeightError,
    ConfigError,
    DataError,
    MissingColumn,
    NonBinaryTreatment,
    NonFiniteValue,
    EmptyArm,
    UnknownCovariate,
    NegativeWeight,
    DomainError,
    ModelError,
    NonConvergence,
    SingularJacobian,
    SingularMatrix,
    Separation,
    RankDeficient,
    TooFewObservations,
    NoMatches,
    AllStrataDropped,
    ZeroVariance,
    SimulationError,
    MWeightWarning,
    ExtremeWeightWarning,
    StratumDroppedWarning,
    MultipleTestingWarning,
    error_record,
)
from .project_config import ProjectConfig
from .serialization import dumps
from .trace import EstimationRecord, all_records, clear as clear_traces
from .types import Failure, Success
from ._config import configure


__all__ = [
    # Data
    "INTERCEPT",
    "ObservationalDataset",
    "DatasetSummary",
    "ingest_csv",
    "dataset_summary",
    # M-estimation
    "EstimatingSystem",
    "SandwichResult",
    "solve",
    "solve_system",
    "sandwich",
    # Weights
    "PropensityFit",
    "SmoothWeightConfig",
    "EffectiveSampleSizes",
    "fit_logistic",
    "smooth_coefficients",
    "matching_weight",
    "matching_weights",
    "att_weight",
    "att_weights",
    "ipw_weight",
    "ipw_weights",
    "effective_sample_sizes",
    # Estimators
    "ESTIMATORS",
    "EffectEstimate",
    "OutcomeModelFit",
    "fit_outcome_models",
    "estimate_mw",
    "estimate_dr_mw",
    "estimate_ipw",
    "estimate_dr_ipw",
    "estimate_ols",
    "estimate_stratified",
    "estimate_matched",
    "plug_in_variance_prop2",
    # Balance
    "BalanceResult",
    "BalanceReport",
    "MirrorHistogram",
    "balance_test",
    "balance_report",
    "standardized_difference",
    "mirror_histogram",
    "render_mirror_svg",
    # Simulation
    "METHODS",
    "ScenarioSpec",
    "ScenarioSummary",
    "MethodSummary",
    "MonteCarloSummary",
    "generate_dataset",
    "run_replicate",
    "run_table1",
    "run_table2",
    "run_table3",
    "format_table1",
    "format_table2",
    "format_table3",
    # Results
    "Success",
    "Failure",
    # Configuration
    "configure",
    "ProjectConfig",
    "dumps",
    # Trace
    "EstimationRecord",
    "all_records",
    "clear_traces",
    # Errors and warnings
    "MWeightError",
    "ConfigError",
    "DataError",
    "MissingColumn",
    "NonBinaryTreatment",
    "NonFiniteValue",
    "EmptyArm",
    "UnknownCovariate",
    "NegativeWeight",
    "DomainError",
    "ModelError",
    "NonConvergence",
    "SingularJacobian",
    "SingularMatrix",
    "Separation",
    "RankDeficient",
    "TooFewObservations",
    "NoMatches",
    "AllStrataDropped",
    "ZeroVariance",
    "SimulationError",
    "MWeightWarning",
    "ExtremeWeightWarning",
    "StratumDroppedWarning",
    "MultipleTestingWarning",
    "error_record",
]
