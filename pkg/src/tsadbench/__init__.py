"""Benchmarking toolkit for multivariate time-series anomaly detection.

Detectors (residual-subspace projection, mean baseline, external score
files), thresholding (tail-fit extrapolation and grid search), point-wise
and point-adjusted evaluation, segment diagnostics, and machine/run
aggregation with variance decomposition and extreme-case search.
"""

__version__ = "0.1.0"

from .core import (
    AnomalySegment,
    ConfusionCounts,
    MachineDataset,
    MetricTriple,
    Orientation,
    ScoreSeries,
    ValidationError,
    canonicalize,
    mask_from_segments,
    segments_from_labels,
)
from .detectors import MeanDetector, PcaDetector, ScoreMode, score_series
from .evaluate import (
    Direction,
    Protocol,
    Strategy,
    aggregate,
    confusion,
    extreme_search,
    point_adjust,
    prf1,
    segment_metrics,
)
from .ingest import SynthConfig, generate_synthetic, load_machine, summarize
from .thresholds import (
    PotConfig,
    Tail,
    apply_threshold,
    fit_gpd,
    grid_search,
    pot_threshold,
)

__all__ = [
    "AnomalySegment",
    "ConfusionCounts",
    "Direction",
    "MachineDataset",
    "MeanDetector",
    "MetricTriple",
    "Orientation",
    "PcaDetector",
    "PotConfig",
    "Protocol",
    "ScoreMode",
    "ScoreSeries",
    "Strategy",
    "SynthConfig",
    "Tail",
    "ValidationError",
    "aggregate",
    "apply_threshold",
    "canonicalize",
    "confusion",
    "extreme_search",
    "fit_gpd",
    "generate_synthetic",
    "grid_search",
    "load_machine",
    "mask_from_segments",
    "point_adjust",
    "pot_threshold",
    "prf1",
    "score_series",
    "segment_metrics",
    "segments_from_labels",
    "summarize",
]
