"""Optimal sampling designs for fractional Brownian motion.

Deterministic schedules minimising the integrated squared estimation error,
and level-triggered threshold policies tuned by Kiefer-Wolfowitz stochastic
approximation on simulated paths.
"""

from __future__ import annotations

from .distortion import (
    DistortionMode,
    DistortionReport,
    SamplingSchedule,
    baseline,
    distortion_multi,
    distortion_one,
)
from .errors import (
    ConditioningError,
    InvalidInputError,
    ObservableError,
    QuadratureError,
    SynthesisError,
)
from .fbm import FbmPath, covariance, simulate_path, simulate_paths
from .kw import KwConfig, KwProblem, KwResult, kw_optimize
from .level import ThresholdPolicy, empirical_distortion, trigger_times
from .optimize import OptimizeResult, optimize_multi, optimize_one

__version__ = "0.1.0"

__all__ = [
    "ConditioningError",
    "DistortionMode",
    "DistortionReport",
    "FbmPath",
    "InvalidInputError",
    "KwConfig",
    "KwProblem",
    "KwResult",
    "ObservableError",
    "OptimizeResult",
    "QuadratureError",
    "SamplingSchedule",
    "SynthesisError",
    "ThresholdPolicy",
    "baseline",
    "covariance",
    "distortion_multi",
    "distortion_one",
    "empirical_distortion",
    "kw_optimize",
    "optimize_multi",
    "optimize_one",
    "simulate_path",
    "simulate_paths",
    "trigger_times",
]
