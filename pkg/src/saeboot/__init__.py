"""Bootstrap-calibrated prediction intervals for small-area means.

Implements the two-level (Fay-Herriot style) area model with non-normal
linking families, variance-component estimation, single and double
parametric bootstrap interval calibration, moment-based non-pivot
diagnostics, and a reproducible Monte Carlo harness.
"""

__version__ = "0.1.0"

from .bootstrap import (
    BootstrapConfig,
    BootstrapDistribution,
    db_interval,
    empirical_quantile,
    hm_interval,
    sb_distribution,
    sb_interval,
)
from .estimators import (
    FitResult,
    MspeEstimate,
    VarianceEstimate,
    eblup,
    fh_estimate,
    fh_objective,
    fit_model,
    leverage,
    mspe,
    pr_estimate,
    wls_beta,
)
from .harness import ScenarioConfig, ScenarioReport, compare_reports, run_scenario
from .intervals import PredictionInterval, direct_interval, traditional_interval, z_quantile
from .model import (
    AreaLevelModel,
    LinkingDistribution,
    PopulationDraw,
    excess_kurtosis,
    linking,
    sample_population,
    standardized_draw,
)
from .pivot import PivotScanReport, fourth_moment_H, mc_fourth_moment, pivot_scan
from .streams import child_seed, substream

__all__ = [
    "AreaLevelModel",
    "BootstrapConfig",
    "BootstrapDistribution",
    "FitResult",
    "LinkingDistribution",
    "MspeEstimate",
    "PivotScanReport",
    "PopulationDraw",
    "PredictionInterval",
    "ScenarioConfig",
    "ScenarioReport",
    "VarianceEstimate",
    "child_seed",
    "compare_reports",
    "db_interval",
    "direct_interval",
    "eblup",
    "empirical_quantile",
    "excess_kurtosis",
    "fh_estimate",
    "fh_objective",
    "fit_model",
    "hm_interval",
    "leverage",
    "linking",
    "mc_fourth_moment",
    "mspe",
    "pivot_scan",
    "pr_estimate",
    "run_scenario",
    "sample_population",
    "sb_distribution",
    "sb_interval",
    "standardized_draw",
    "substream",
    "traditional_interval",
    "wls_beta",
    "z_quantile",
]
