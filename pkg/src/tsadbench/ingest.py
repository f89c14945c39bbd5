"""Dataset readers, summary statistics, score files, and synthetic data.

The on-disk layout mirrors the public server-machine benchmark:
``<root>/train/machine-<id>.txt``, ``<root>/test/machine-<id>.txt`` and
``<root>/test_label/machine-<id>.txt``, with comma-separated decimal rows
for the matrices and one binary label per line. The synthetic generator
emits the same layout so every downstream stage can be exercised without
the real dataset.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from .core import (
    AnomalySegment,
    MachineDataset,
    Orientation,
    ScoreSeries,
    ValidationError,
    mask_from_segments,
    segments_from_labels,
)

# The 28 machines of the benchmark, grouped 1-, 2-, 3-.
SMD_MACHINES = (
    [f"1-{i}" for i in range(1, 9)]
    + [f"2-{i}" for i in range(1, 10)]
    + [f"3-{i}" for i in range(1, 12)]
)

DATA_ROOT_ENV = "TSADBENCH_DATA"


class DataFormatError(ValueError):
    """A data file exists but cannot be parsed; names the file and line."""

    def __init__(self, path, line: int | None, message: str) -> None:
        where = f"{path}" if line is None else f"{path}:{line}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


class LengthMismatchError(ValueError):
    """Label and test files disagree on the number of timesteps."""


def _machine_paths(root, machine_id: str) -> tuple[Path, Path, Path]:
    root = Path(root)
    return (
        root / "train" / f"machine-{machine_id}.txt",
        root / "test" / f"machine-{machine_id}.txt",
        root / "test_label" / f"machine-{machine_id}.txt",
    )


def _scan_matrix_file(path: Path) -> None:
    """Slow diagnostic pass locating the first ragged or non-numeric line."""
    width = None
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            tokens = line.strip().split(",")
            if width is None:
                width = len(tokens)
            elif len(tokens) != width:
                raise DataFormatError(
                    path, lineno,
                    f"ragged row: {len(tokens)} columns, expected {width}",
                )
            for tok in tokens:
                try:
                    float(tok)
                except ValueError:
                    raise DataFormatError(
                        path, lineno, f"non-numeric token {tok!r}"
                    ) from None


def _read_matrix(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"missing data file: {path}")
    try:
        matrix = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except ValueError:
        _scan_matrix_file(path)
        raise DataFormatError(path, None, "unreadable matrix") from None
    if matrix.size == 0:
        raise DataFormatError(path, None, "empty matrix file")
    if not np.all(np.isfinite(matrix)):
        bad = int(np.flatnonzero(~np.isfinite(matrix).all(axis=1))[0]) + 1
        raise DataFormatError(path, bad, "non-finite value")
    return matrix


def _read_labels(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"missing label file: {path}")
    labels = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            tok = line.strip()
            if not tok:
                continue
            if tok not in ("0", "1"):
                raise DataFormatError(path, lineno, f"label must be 0 or 1, got {tok!r}")
            labels.append(int(tok))
    if not labels:
        raise DataFormatError(path, None, "empty label file")
    return np.array(labels, dtype=np.int64)


def load_machine(root, machine_id: str) -> MachineDataset:
    """Read one machine's train/test matrices and test labels."""
    train_path, test_path, label_path = _machine_paths(root, machine_id)
    train = _read_matrix(train_path)
    test = _read_matrix(test_path)
    labels = _read_labels(label_path)
    if labels.size != test.shape[0]:
        raise LengthMismatchError(
            f"{label_path}: {labels.size} labels but {test_path} has "
            f"{test.shape[0]} rows"
        )
    if train.shape[1] != test.shape[1]:
        raise DataFormatError(
            test_path, None,
            f"{test.shape[1]} columns but train file has {train.shape[1]}",
        )
    return MachineDataset(machine_id, train, test, labels)


def load_scores(path, orientation: Orientation) -> ScoreSeries:
    """Read an externally produced score file, one decimal real per line."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing score file: {path}")
    values = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            tok = line.strip()
            if not tok:
                continue
            try:
                values.append(float(tok))
            except ValueError:
                raise DataFormatError(
                    path, lineno, f"non-numeric score {tok!r}"
                ) from None
    if not values:
        raise DataFormatError(path, None, "empty score file")
    return ScoreSeries(np.array(values), orientation)


def round_half_up(value: float, places: int = 2) -> float:
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class DatasetSummary:
    """Per-machine (or pooled) label statistics.

    Segment-length std uses the population (1/n) convention, which is the
    one the published per-machine and pooled figures follow; a single
    segment therefore reports std 0 rather than NaN.
    """

    machine_id: str
    total_points: int
    test_points: int
    anomaly_points: int
    anomaly_pct: float
    segment_count: int
    segment_len_min: int
    segment_len_max: int
    segment_len_mean: float
    segment_len_std: float


def summarize(dataset: MachineDataset) -> DatasetSummary:
    segments = segments_from_labels(dataset.labels)
    lengths = np.array([len(s) for s in segments], dtype=float)
    total = dataset.train.shape[0] + dataset.test.shape[0]
    anomalies = int(dataset.labels.sum())
    return DatasetSummary(
        machine_id=dataset.machine_id,
        total_points=total,
        test_points=dataset.test.shape[0],
        anomaly_points=anomalies,
        anomaly_pct=100.0 * anomalies / total,
        segment_count=len(segments),
        segment_len_min=int(lengths.min()) if lengths.size else 0,
        segment_len_max=int(lengths.max()) if lengths.size else 0,
        segment_len_mean=float(lengths.mean()) if lengths.size else 0.0,
        segment_len_std=float(lengths.std()) if lengths.size else 0.0,
    )


def pooled_summary(summaries: list[DatasetSummary]) -> DatasetSummary:
    """Exact pooled row across machines.

    The pooled second moment is reconstructed from each machine's count,
    mean and population std, so the pooled std is exact rather than an
    average of stds.
    """
    if not summaries:
        raise ValidationError("nothing to pool")
    total = sum(s.total_points for s in summaries)
    anomalies = sum(s.anomaly_points for s in summaries)
    n_seg = sum(s.segment_count for s in summaries)
    with_segments = [s for s in summaries if s.segment_count]
    sum_len = sum(s.segment_count * s.segment_len_mean for s in with_segments)
    sum_sq = sum(
        s.segment_count * (s.segment_len_mean**2 + s.segment_len_std**2)
        for s in with_segments
    )
    mean = sum_len / n_seg if n_seg else 0.0
    var = max(sum_sq / n_seg - mean**2, 0.0) if n_seg else 0.0
    return DatasetSummary(
        machine_id="All",
        total_points=total,
        test_points=sum(s.test_points for s in summaries),
        anomaly_points=anomalies,
        anomaly_pct=100.0 * anomalies / total,
        segment_count=n_seg,
        segment_len_min=min((s.segment_len_min for s in with_segments), default=0),
        segment_len_max=max((s.segment_len_max for s in with_segments), default=0),
        segment_len_mean=mean,
        segment_len_std=float(np.sqrt(var)),
    )


SUMMARY_COLUMNS = (
    "machine,total_points,test_points,anomaly_points,anomaly_pct,"
    "segment_count,segment_len_min,segment_len_max,segment_len_mean,"
    "segment_len_std"
)


def summary_csv(summaries: list[DatasetSummary], include_all: bool = True) -> str:
    """Byte-stable CSV, percentages and lengths rounded half-up to 2 decimals."""
    rows = list(summaries)
    if include_all and rows:
        rows.append(pooled_summary(summaries))
    lines = [SUMMARY_COLUMNS]
    for s in rows:
        lines.append(
            f"{s.machine_id},{s.total_points},{s.test_points},"
            f"{s.anomaly_points},{round_half_up(s.anomaly_pct):.2f},"
            f"{s.segment_count},{s.segment_len_min},{s.segment_len_max},"
            f"{round_half_up(s.segment_len_mean):.2f},"
            f"{round_half_up(s.segment_len_std):.2f}"
        )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SynthConfig:
    """Low-rank-plus-noise generator with subspace-orthogonal injections.

    Anomalies are added along a fixed direction orthogonal to the mixing
    columns, so a residual-subspace detector provably sees them while the
    principal components are untouched; magnitude 0 is a null-injection
    control where the labels mark ordinary data. The seed fully determines
    the output.
    """

    channels: int
    train_len: int
    test_len: int
    rank: int
    noise: float = 0.1
    segment_count: int = 5
    seg_len_min: int = 10
    seg_len_max: int = 50
    magnitude: float = 10.0
    seed: int = 0
    machine_id: str = "synth-1"

    def __post_init__(self) -> None:
        if self.rank >= self.channels or self.rank < 1:
            raise ValidationError(
                f"rank must be in 1..channels-1, got {self.rank} of {self.channels}"
            )
        if min(self.train_len, self.test_len) < 1:
            raise ValidationError("train and test lengths must be positive")
        if self.segment_count < 0 or self.seg_len_min < 1 \
                or self.seg_len_max < self.seg_len_min:
            raise ValidationError("bad segment configuration")
        if self.noise < 0.0:
            raise ValidationError("noise scale must be >= 0")


def _place_segments(rng: np.random.Generator, cfg: SynthConfig
                    ) -> list[AnomalySegment]:
    if cfg.segment_count == 0:
        return []
    lengths = rng.integers(cfg.seg_len_min, cfg.seg_len_max + 1,
                           size=cfg.segment_count)
    # Interior gaps of >= 1 keep segments disjoint and non-adjacent.
    slack = cfg.test_len - int(lengths.sum()) - (cfg.segment_count - 1)
    if slack < 0:
        raise ValidationError(
            f"{cfg.segment_count} segments of length up to {cfg.seg_len_max} "
            f"do not fit disjointly in {cfg.test_len} test points"
        )
    bars = np.sort(rng.integers(0, slack + 1, size=cfg.segment_count))
    segments = []
    cursor = 0
    prev_bar = 0
    for i in range(cfg.segment_count):
        cursor += int(bars[i]) - prev_bar
        prev_bar = int(bars[i])
        if i > 0:
            cursor += 1
        segments.append(AnomalySegment(cursor, cursor + int(lengths[i]) - 1))
        cursor = segments[-1].end + 1
    return segments


def generate_synthetic(cfg: SynthConfig) -> tuple[MachineDataset, list[AnomalySegment]]:
    """Deterministic dataset plus its ground-truth segments."""
    rng = np.random.default_rng(cfg.seed)
    mixing = rng.normal(size=(cfg.channels, cfg.rank))

    def sample(n: int) -> np.ndarray:
        latent = rng.standard_normal((n, cfg.rank))
        return latent @ mixing.T + cfg.noise * rng.standard_normal((n, cfg.channels))

    train = sample(cfg.train_len)
    test = sample(cfg.test_len)
    basis, _ = np.linalg.qr(mixing)
    direction = rng.standard_normal(cfg.channels)
    direction -= basis @ (basis.T @ direction)
    direction /= np.linalg.norm(direction)
    segments = _place_segments(rng, cfg)
    labels = mask_from_segments(segments, cfg.test_len)
    for seg in segments:
        test[seg.start : seg.end + 1] += cfg.magnitude * direction
    return MachineDataset(cfg.machine_id, train, test, labels), segments


def write_smd_layout(dataset: MachineDataset, root) -> None:
    """Write a dataset in the three-directory text layout read by load_machine."""
    root = Path(root)
    for sub in ("train", "test", "test_label"):
        os.makedirs(root / sub, exist_ok=True)
    train_path, test_path, label_path = _machine_paths(root, dataset.machine_id)
    np.savetxt(train_path, dataset.train, delimiter=",", fmt="%.17g")
    np.savetxt(test_path, dataset.test, delimiter=",", fmt="%.17g")
    np.savetxt(label_path, dataset.labels, fmt="%d")
