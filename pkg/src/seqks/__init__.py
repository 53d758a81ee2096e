"""Sequential change detection with windowed Kolmogorov-Smirnov statistics."""

from .baselines import (
    EFGaussianDetector,
    EFPoissonDetector,
    GaussianNull,
    GLRGaussianDetector,
    GLRPoissonDetector,
    PoissonNull,
    PooledKSDetector,
)
from .calibration import (
    FalseAlarmBudget,
    PoissonCounts,
    FixedCounts,
    calibrate_monte_carlo,
    false_alarm_bound,
    power_lower_bound,
    threshold_from_bound,
    threshold_for_target,
    tv_distance,
)
from .ks_core import (
    CountVector,
    DetectorConfig,
    RawSampleBatch,
    RawWindowedKSDetector,
    SpectrumCdf,
    StepOutcome,
    WindowedKSDetector,
    WindowState,
    detector_step,
    kolmogorov_cdf,
    ks_distance,
    ks_distance_raw,
)
from .simulation import (
    Density,
    GaussianMixture,
    Scenario,
    SourceSpec,
    gaussian_mixture_density,
    mix_densities,
    run_scenario,
)

__all__ = [
    "EFGaussianDetector",
    "EFPoissonDetector",
    "GaussianNull",
    "GLRGaussianDetector",
    "GLRPoissonDetector",
    "PoissonNull",
    "PooledKSDetector",
    "FalseAlarmBudget",
    "PoissonCounts",
    "FixedCounts",
    "calibrate_monte_carlo",
    "false_alarm_bound",
    "power_lower_bound",
    "threshold_from_bound",
    "threshold_for_target",
    "tv_distance",
    "CountVector",
    "DetectorConfig",
    "RawSampleBatch",
    "RawWindowedKSDetector",
    "SpectrumCdf",
    "StepOutcome",
    "WindowedKSDetector",
    "WindowState",
    "detector_step",
    "kolmogorov_cdf",
    "ks_distance",
    "ks_distance_raw",
    "Density",
    "GaussianMixture",
    "Scenario",
    "SourceSpec",
    "gaussian_mixture_density",
    "mix_densities",
    "run_scenario",
]

__version__ = "0.1.0"
