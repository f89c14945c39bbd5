"""Shared domain types and elementary label/score conversions.

Everything in here is immutable after construction and all operations are
pure, so values can be shared freely across worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class ValidationError(ValueError):
    """Raised when a domain-type invariant is violated at construction."""


class Orientation(Enum):
    """Which end of the score scale means 'anomalous'.

    Reconstruction-likelihood scores are LOWER_ANOMALOUS (good reconstruction
    gives high scores); residual-subspace and mean-deviation scores are
    HIGHER_ANOMALOUS.
    """

    HIGHER_ANOMALOUS = "higher"
    LOWER_ANOMALOUS = "lower"


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ScoreSeries:
    """Per-timestep anomaly scores plus their orientation."""

    values: np.ndarray
    orientation: Orientation

    def __post_init__(self) -> None:
        arr = _frozen_array(self.values)
        if arr.ndim != 1:
            raise ValidationError(f"score series must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise ValidationError(f"non-finite score at index {bad}")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True, order=True)
class AnomalySegment:
    """Contiguous ground-truth anomaly interval, endpoints inclusive."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.end < self.start:
            raise ValidationError(f"bad segment [{self.start}, {self.end}]")

    def __len__(self) -> int:
        return self.end - self.start + 1


def validate_segments(segments: list[AnomalySegment]) -> list[AnomalySegment]:
    """Check that segments are sorted, disjoint and separated by >= 1 point."""
    for prev, cur in zip(segments, segments[1:]):
        if cur.start <= prev.end + 1:
            raise ValidationError(
                f"segments [{prev.start},{prev.end}] and [{cur.start},{cur.end}] "
                "overlap or are adjacent"
            )
    return segments


@dataclass(frozen=True)
class MachineDataset:
    """Train/test matrices and test labels for one machine.

    Rows are timesteps, columns are the M monitored metrics. The training
    half is assumed anomaly-free; labels belong to the test half only.
    """

    machine_id: str
    train: np.ndarray
    test: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        train = _frozen_array(self.train)
        test = _frozen_array(self.test)
        labels = _frozen_array(self.labels, dtype=np.int64)
        if train.ndim != 2 or test.ndim != 2:
            raise ValidationError("train and test must be 2-D matrices")
        if train.shape[1] != test.shape[1]:
            raise ValidationError(
                f"channel mismatch: train has {train.shape[1]} columns, "
                f"test has {test.shape[1]}"
            )
        if labels.ndim != 1 or labels.size != test.shape[0]:
            raise ValidationError(
                f"labels length {labels.size} != test rows {test.shape[0]}"
            )
        if not np.isin(labels, (0, 1)).all():
            raise ValidationError("labels must be binary")
        for name, arr in (("train", train), ("test", test)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite value in {name} matrix")
        object.__setattr__(self, "train", train)
        object.__setattr__(self, "test", test)
        object.__setattr__(self, "labels", labels)

    @property
    def n_channels(self) -> int:
        return self.train.shape[1]

    def segments(self) -> list[AnomalySegment]:
        return segments_from_labels(self.labels)


@dataclass(frozen=True)
class ConfusionCounts:
    """Point-level confusion counts for one machine x run x protocol."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValidationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricTriple:
    precision: float
    recall: float
    f1: float


def canonicalize(series: ScoreSeries) -> ScoreSeries:
    """Map any score series to the HIGHER_ANOMALOUS orientation.

    LOWER_ANOMALOUS values are negated; the value transform is an involution,
    so canonicalizing the negated values back under the lower-anomalous
    convention recovers the original series. Thresholding the canonical
    series at -t reproduces thresholding the original lower-anomalous series
    at t.
    """
    if series.orientation is Orientation.HIGHER_ANOMALOUS:
        return series
    return ScoreSeries(-series.values, Orientation.HIGHER_ANOMALOUS)


def segments_from_labels(labels) -> list[AnomalySegment]:
    """Extract maximal runs of 1s as inclusive [start, end] segments."""
    arr = np.asarray(labels, dtype=np.int64)
    if arr.ndim != 1:
        raise ValidationError("labels must be 1-D")
    if arr.size == 0:
        return []
    if not np.isin(arr, (0, 1)).all():
        raise ValidationError("labels must be binary")
    diffs = np.diff(arr, prepend=0, append=0)
    starts = np.flatnonzero(diffs == 1)
    ends = np.flatnonzero(diffs == -1) - 1
    return [AnomalySegment(int(s), int(e)) for s, e in zip(starts, ends)]


def mask_from_segments(segments: list[AnomalySegment], length: int) -> np.ndarray:
    """Inverse of segments_from_labels: render segments as a binary mask."""
    mask = np.zeros(length, dtype=np.int64)
    for seg in segments:
        if seg.end >= length:
            raise ValidationError(
                f"segment [{seg.start},{seg.end}] out of range for length {length}"
            )
        mask[seg.start : seg.end + 1] = 1
    return mask
