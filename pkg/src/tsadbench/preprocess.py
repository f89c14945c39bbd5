"""Per-channel scaling and window extraction feeding the detectors.

Min-max scaling is fitted per set (train stats from train, test stats from
test), while z-score standardization is fitted on train only and applied to
both halves. Constant channels map to 0 under either transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ValidationError, _frozen_array


@dataclass(frozen=True)
class MinMaxStats:
    """Per-channel extremes of the set the transform was fitted on."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "min", _frozen_array(self.min))
        object.__setattr__(self, "max", _frozen_array(self.max))


@dataclass(frozen=True)
class ZScoreStats:
    """Per-channel mean and population (1/N) standard deviation.

    The 1/N convention keeps the standardization consistent with the
    covariance estimator downstream, which also divides by N.
    """

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", _frozen_array(self.mean))
        object.__setattr__(self, "std", _frozen_array(self.std))


def minmax_fit(matrix) -> MinMaxStats:
    arr = np.asarray(matrix, dtype=float)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValidationError("min-max fit needs a non-empty 2-D matrix")
    return MinMaxStats(arr.min(axis=0), arr.max(axis=0))


def minmax_apply(matrix, stats: MinMaxStats) -> np.ndarray:
    """(x - min) / (max - min) per channel, no clipping outside the fit range."""
    arr = np.asarray(matrix, dtype=float)
    if arr.shape[1] != stats.min.size:
        raise ValidationError(
            f"matrix has {arr.shape[1]} channels, stats have {stats.min.size}"
        )
    span = stats.max - stats.min
    safe = np.where(span == 0.0, 1.0, span)
    out = (arr - stats.min) / safe
    out[:, span == 0.0] = 0.0
    return out


def zscore_fit(train) -> ZScoreStats:
    arr = np.asarray(train, dtype=float)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValidationError("z-score fit needs a non-empty 2-D matrix")
    return ZScoreStats(arr.mean(axis=0), arr.std(axis=0))


def zscore_apply(matrix, stats: ZScoreStats) -> np.ndarray:
    """(x - mean) / std per channel; zero-variance channels map to 0."""
    arr = np.asarray(matrix, dtype=float)
    if arr.shape[1] != stats.mean.size:
        raise ValidationError(
            f"matrix has {arr.shape[1]} channels, stats have {stats.mean.size}"
        )
    safe = np.where(stats.std == 0.0, 1.0, stats.std)
    out = (arr - stats.mean) / safe
    out[:, stats.std == 0.0] = 0.0
    return out


def window(matrix, t: int, w: int) -> np.ndarray:
    """Return the M x (w+1) slice of observations t .. t+w.

    Columns are consecutive timesteps; w=0 yields a single observation as a
    column vector.
    """
    arr = np.asarray(matrix, dtype=float)
    if t < 0 or w < 0 or t + w >= arr.shape[0]:
        raise ValidationError(
            f"window t={t}, w={w} out of range for {arr.shape[0]} rows"
        )
    return arr[t : t + w + 1].T.copy()
