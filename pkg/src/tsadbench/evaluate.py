"""Point-wise and point-adjusted metrics, aggregation, and extreme search.

Aggregation follows three strategies. Average takes the grand mean of
per-machine-per-run scores (equal to the mean of machine means and of run
means) and decomposes variability into machine and run components. Macro
averages precision and recall across machines per run before combining into
F1. Micro pools TP/FP/FN across machines per run, weighting machines by
event counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import (
    AnomalySegment,
    ConfusionCounts,
    MetricTriple,
    ValidationError,
    mask_from_segments,
)


class Protocol(Enum):
    """Evaluation protocol: point-adjusted or plain point-wise."""

    PA = "pa"
    POINTWISE = "pointwise"


class Strategy(Enum):
    AVERAGE = "average"
    MACRO = "macro"
    MICRO = "micro"


class Direction(Enum):
    MIN = "min"
    MAX = "max"


def confusion(pred, labels) -> ConfusionCounts:
    p = np.asarray(pred, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape:
        raise ValidationError(
            f"prediction length {p.size} != label length {y.size}"
        )
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    tn = int(np.sum((p == 0) & (y == 0)))
    return ConfusionCounts(tp, fp, fn, tn)


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def prf1(counts: ConfusionCounts) -> MetricTriple:
    """Precision, recall and F1 with the 0/0 = 0 convention."""
    p = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    r = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    return MetricTriple(p, r, _f1(p, r))


def point_adjust(pred, segments: list[AnomalySegment]) -> np.ndarray:
    """Mark a whole ground-truth segment detected if any point in it is.

    Predictions outside segments are left unchanged; the transform is
    idempotent and never decreases any of precision, recall or F1.
    """
    out = np.asarray(pred, dtype=np.int64).copy()
    for seg in segments:
        if seg.end >= out.size:
            raise ValidationError(
                f"segment [{seg.start},{seg.end}] out of range for length {out.size}"
            )
        window = out[seg.start : seg.end + 1]
        if window.any():
            window[:] = 1
    return out


def _count_runs(mask: np.ndarray) -> int:
    if mask.size == 0:
        return 0
    diffs = np.diff(mask, prepend=0)
    return int(np.sum(diffs == 1))


@dataclass(frozen=True)
class SegmentDiagnostics:
    """Per-run segment-level detection behaviour.

    episodes_detected counts all maximal runs of predicted points (threshold
    crossings into the anomaly state); anomaly_episodes counts the runs that
    remain after intersecting predictions with the ground-truth mask;
    segments_detected counts ground-truth segments containing at least one
    predicted point. coverage holds the detected percentage of every
    ground-truth segment (undetected segments contribute 0); its summary
    statistics use the population (1/n) convention.
    """

    episodes_detected: int
    anomaly_episodes: int
    segments_detected: int
    coverage: np.ndarray

    def __post_init__(self) -> None:
        cov = np.array(self.coverage, dtype=float)
        cov.flags.writeable = False
        object.__setattr__(self, "coverage", cov)

    @property
    def coverage_mean(self) -> float:
        return float(self.coverage.mean()) if self.coverage.size else 0.0

    @property
    def coverage_std(self) -> float:
        return float(self.coverage.std()) if self.coverage.size else 0.0

    @property
    def coverage_min(self) -> float:
        return float(self.coverage.min()) if self.coverage.size else 0.0

    @property
    def coverage_max(self) -> float:
        return float(self.coverage.max()) if self.coverage.size else 0.0


def segment_metrics(pred, segments: list[AnomalySegment]) -> SegmentDiagnostics:
    p = np.asarray(pred, dtype=np.int64)
    gt_mask = mask_from_segments(segments, p.size)
    detected = 0
    coverage = np.zeros(len(segments))
    for i, seg in enumerate(segments):
        hits = int(p[seg.start : seg.end + 1].sum())
        if hits:
            detected += 1
        coverage[i] = 100.0 * hits / len(seg)
    return SegmentDiagnostics(
        episodes_detected=_count_runs(p),
        anomaly_episodes=_count_runs(p & gt_mask),
        segments_detected=detected,
        coverage=coverage,
    )


@dataclass(frozen=True)
class RunMetrics:
    """Everything measured for one machine x run x protocol cell."""

    machine_id: str
    run: int
    counts: ConfusionCounts
    metrics: MetricTriple
    diagnostics: SegmentDiagnostics


class MetricGrid:
    """Complete N-machines x r-runs grid of counts and metrics."""

    def __init__(self, machine_ids, tp, fp, fn, precision, recall, f1) -> None:
        self.machine_ids = list(machine_ids)
        self.tp = np.asarray(tp, dtype=np.int64)
        self.fp = np.asarray(fp, dtype=np.int64)
        self.fn = np.asarray(fn, dtype=np.int64)
        self.precision = np.asarray(precision, dtype=float)
        self.recall = np.asarray(recall, dtype=float)
        self.f1 = np.asarray(f1, dtype=float)
        shape = self.f1.shape
        if len(shape) != 2 or shape[0] != len(self.machine_ids):
            raise ValidationError("metric grid must be machines x runs")
        for arr in (self.tp, self.fp, self.fn, self.precision, self.recall):
            if arr.shape != shape:
                raise ValidationError("ragged metric grid")

    @classmethod
    def from_runs(cls, rows: list[list[RunMetrics]]) -> "MetricGrid":
        if not rows:
            raise ValidationError("empty metric grid")
        r = len(rows[0])
        if r == 0 or any(len(row) != r for row in rows):
            raise ValidationError("ragged metric grid")
        ids = [row[0].machine_id for row in rows]

        def grid(get):
            return [[get(cell) for cell in row] for row in rows]

        return cls(
            ids,
            grid(lambda c: c.counts.tp),
            grid(lambda c: c.counts.fp),
            grid(lambda c: c.counts.fn),
            grid(lambda c: c.metrics.precision),
            grid(lambda c: c.metrics.recall),
            grid(lambda c: c.metrics.f1),
        )

    @property
    def n_machines(self) -> int:
        return self.f1.shape[0]

    @property
    def n_runs(self) -> int:
        return self.f1.shape[1]


def _micro_triple(tp: int, fp: int, fn: int) -> MetricTriple:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return MetricTriple(p, r, _f1(p, r))


def _assignment_triple(grid: MetricGrid, strategy: Strategy,
                       assignment: np.ndarray) -> MetricTriple:
    """Strategy metrics for one run-per-machine assignment."""
    idx = (np.arange(grid.n_machines), assignment)
    if strategy is Strategy.AVERAGE:
        p = float(grid.precision[idx].mean())
        r = float(grid.recall[idx].mean())
        return MetricTriple(p, r, float(grid.f1[idx].mean()))
    if strategy is Strategy.MACRO:
        p = float(grid.precision[idx].mean())
        r = float(grid.recall[idx].mean())
        return MetricTriple(p, r, _f1(p, r))
    return _micro_triple(
        int(grid.tp[idx].sum()), int(grid.fp[idx].sum()), int(grid.fn[idx].sum())
    )


def _assignment_f1(grid: MetricGrid, strategy: Strategy,
                   assignment: np.ndarray) -> float:
    return _assignment_triple(grid, strategy, assignment).f1


def _hill_climb(grid: MetricGrid, strategy: Strategy, sign: float,
                start: np.ndarray) -> tuple[float, np.ndarray]:
    """Steepest-ascent local search; neighborhood = change one machine's run."""
    current = start.copy()
    value = sign * _assignment_f1(grid, strategy, current)
    while True:
        best_move = None
        best_value = value
        for i in range(grid.n_machines):
            original = current[i]
            for j in range(grid.n_runs):
                if j == original:
                    continue
                current[i] = j
                cand = sign * _assignment_f1(grid, strategy, current)
                if cand > best_value:
                    best_value = cand
                    best_move = (i, j)
            current[i] = original
        if best_move is None:
            return value, current
        current[best_move[0]] = best_move[1]
        value = best_value


def extreme_search(grid: MetricGrid, strategy: Strategy, direction: Direction,
                   restarts: int = 16, seed: int = 0) -> tuple[float, np.ndarray]:
    """Extreme F1 over run-per-machine assignments, with the assignment.

    The Average objective decomposes per machine, so its optimum is exact and
    closed-form. Macro and Micro use steepest-ascent hill climbing from
    seeded random restarts; ties are broken toward the lexicographically
    smallest assignment so the result is deterministic given the seed.
    """
    sign = 1.0 if direction is Direction.MAX else -1.0
    if strategy is Strategy.AVERAGE:
        rows = sign * grid.f1
        assignment = rows.argmax(axis=1)
        value = float(
            rows[np.arange(grid.n_machines), assignment].mean()
        )
        return sign * value, assignment
    rng = np.random.default_rng(seed)
    best_value = -np.inf
    best_assignment: np.ndarray | None = None
    for _ in range(max(1, restarts)):
        start = rng.integers(0, grid.n_runs, size=grid.n_machines)
        value, assignment = _hill_climb(grid, strategy, sign, start)
        key = tuple(assignment)
        if value > best_value or (
            value == best_value and key < tuple(best_assignment)
        ):
            best_value = value
            best_assignment = assignment
    return sign * best_value, best_assignment


def _sample_std(values: np.ndarray) -> tuple[float, bool]:
    """Sample (n-1) std; reported as 0 with defined=False when n < 2."""
    if values.size < 2:
        return 0.0, False
    return float(values.std(ddof=1)), True


@dataclass(frozen=True)
class AggregatePanel:
    """One strategy's aggregate: means, dispersions and F1 extremes."""

    strategy: Strategy
    mean: MetricTriple
    sigma_runs: MetricTriple
    sigma_runs_defined: bool
    sigma_machines: MetricTriple | None
    sigma_machines_defined: bool
    min_metrics: MetricTriple
    min_assignment: np.ndarray
    max_metrics: MetricTriple
    max_assignment: np.ndarray


def aggregate(grid: MetricGrid, strategy: Strategy,
              restarts: int = 16, seed: int = 0) -> AggregatePanel:
    """Aggregate a complete machines x runs grid under one strategy.

    With a single run the run dispersion is undefined and reported as 0 with
    the defined flag cleared; likewise for the machine dispersion with a
    single machine. The min/max rows carry the strategy metrics of the
    assignments extremizing F1.
    """
    sigma_machines = None
    machines_defined = False
    if strategy is Strategy.AVERAGE:
        mean = MetricTriple(
            float(grid.precision.mean()),
            float(grid.recall.mean()),
            float(grid.f1.mean()),
        )
        run_means = [grid.precision.mean(axis=0), grid.recall.mean(axis=0),
                     grid.f1.mean(axis=0)]
        machine_means = [grid.precision.mean(axis=1), grid.recall.mean(axis=1),
                         grid.f1.mean(axis=1)]
        sp, runs_defined = _sample_std(run_means[0])
        sr, _ = _sample_std(run_means[1])
        sf, _ = _sample_std(run_means[2])
        sigma_runs = MetricTriple(sp, sr, sf)
        mp, machines_defined = _sample_std(machine_means[0])
        mr, _ = _sample_std(machine_means[1])
        mf, _ = _sample_std(machine_means[2])
        sigma_machines = MetricTriple(mp, mr, mf)
    else:
        per_run = [
            _assignment_triple(grid, strategy,
                               np.full(grid.n_machines, j, dtype=np.int64))
            for j in range(grid.n_runs)
        ]
        ps = np.array([t.precision for t in per_run])
        rs = np.array([t.recall for t in per_run])
        fs = np.array([t.f1 for t in per_run])
        mean = MetricTriple(float(ps.mean()), float(rs.mean()), float(fs.mean()))
        sp, runs_defined = _sample_std(ps)
        sr, _ = _sample_std(rs)
        sf, _ = _sample_std(fs)
        sigma_runs = MetricTriple(sp, sr, sf)
    _, min_assignment = extreme_search(grid, strategy, Direction.MIN,
                                       restarts, seed)
    _, max_assignment = extreme_search(grid, strategy, Direction.MAX,
                                       restarts, seed)
    return AggregatePanel(
        strategy=strategy,
        mean=mean,
        sigma_runs=sigma_runs,
        sigma_runs_defined=runs_defined,
        sigma_machines=sigma_machines,
        sigma_machines_defined=machines_defined,
        min_metrics=_assignment_triple(grid, strategy, min_assignment),
        min_assignment=min_assignment,
        max_metrics=_assignment_triple(grid, strategy, max_assignment),
        max_assignment=max_assignment,
    )
