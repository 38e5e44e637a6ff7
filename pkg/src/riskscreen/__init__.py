"""Survey-cohort risk modeling and screening-policy utility analysis."""

from .calibrate import (
    CalibrationCurve,
    binned_calibration,
    group_calibration,
    smoothed_calibration,
)
from .features import (
    DesignBuilder,
    DesignMatrix,
    FeatureSpec,
    build_design,
    extended_spec,
    race_aware_spec,
    race_unaware_spec,
)
from .ingest import (
    Cohort,
    CohortCriteria,
    HarmonizationMap,
    OutcomeDefinition,
    PatientRecord,
    Race,
    build_cohort,
    harmonize_cycles,
    load_csv,
)
from .model import (
    RiskModel,
    WeightedLogisticRegression,
    fit_logistic,
    fit_risk_model,
)
from .pipeline import RunConfig, load_config, run_pipeline, validate_config
from .utility import (
    RewardSpec,
    ScreeningPolicy,
    UtilityReport,
    capacity_threshold,
    concordance,
    decide,
    realized_utility,
    risk_distribution,
    sensitivity_sweep,
    subgroup_summary,
    threshold_from_reward,
    utility_curve,
    utility_gain,
)
from .xport import load_xport, parse_xport, save_xport, write_xport

__version__ = "0.1.0"

__all__ = [
    "CalibrationCurve",
    "Cohort",
    "CohortCriteria",
    "DesignBuilder",
    "DesignMatrix",
    "FeatureSpec",
    "HarmonizationMap",
    "OutcomeDefinition",
    "PatientRecord",
    "Race",
    "RewardSpec",
    "RiskModel",
    "RunConfig",
    "ScreeningPolicy",
    "UtilityReport",
    "WeightedLogisticRegression",
    "binned_calibration",
    "build_cohort",
    "build_design",
    "capacity_threshold",
    "concordance",
    "decide",
    "extended_spec",
    "fit_logistic",
    "fit_risk_model",
    "group_calibration",
    "harmonize_cycles",
    "load_config",
    "load_csv",
    "load_xport",
    "parse_xport",
    "race_aware_spec",
    "race_unaware_spec",
    "realized_utility",
    "risk_distribution",
    "run_pipeline",
    "save_xport",
    "sensitivity_sweep",
    "smoothed_calibration",
    "subgroup_summary",
    "threshold_from_reward",
    "utility_curve",
    "utility_gain",
    "validate_config",
    "write_xport",
]
