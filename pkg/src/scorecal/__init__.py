"""Calibrate approximate posterior samples with an energy-score-optimised affine map."""
from __future__ import annotations

from .diagnostics import CoverageCurve, SummaryMetrics, coverage_curve, credible_interval, summarize
from .optimizer import NoImprovementWarning, OptimizerConfig, maximize, objective
from .pipeline import (
    CalibrationConfig,
    CalibrationResult,
    CalibrationSet,
    ImportanceDistribution,
    ModelSpec,
    build_calibration_set,
    calibrate,
    sample_importance,
)
from .score import ScoreConfig, energy_score_oracle, energy_score_perm, energy_score_unbiased
from .transform import MomentTransform, PenaltyConfig, apply, pushforward
from .weights import clip, raw_weights, unit_weights

__version__ = "0.1.0"
