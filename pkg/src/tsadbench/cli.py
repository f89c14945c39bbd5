"""Command-line front end: dataset summary, benchmark runs, synthetic data.

``summarize`` reproduces the per-machine and pooled label statistics table,
``run`` executes detector -> scores -> threshold -> predictions -> metrics for
every (machine, run) cell of a config and writes per-run CSV plus aggregate
JSON, and ``synth`` materializes a generated dataset in the standard on-disk
layout. Exit codes: 0 success, 1 cell failures, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_experiment, load_synth
from .core import MachineDataset, ScoreSeries
from .detectors import MeanDetector, PcaDetector, score_series, train_score_series
from .evaluate import (
    AggregatePanel,
    MetricGrid,
    Protocol,
    Strategy,
    aggregate,
    confusion,
    point_adjust,
    prf1,
    segment_metrics,
)
from .ingest import (
    DATA_ROOT_ENV,
    SMD_MACHINES,
    generate_synthetic,
    load_machine,
    load_scores,
    summarize,
    summary_csv,
    write_smd_layout,
)
from .thresholds import PotConfig, apply_threshold, grid_search, pot_threshold

METRICS_COLUMNS = [
    "machine", "run", "method", "protocol", "threshold",
    "tp", "fp", "fn", "tn", "precision", "recall", "f1",
    "episodes_detected", "anomaly_episodes", "segments_detected",
    "coverage_mean", "coverage_std", "coverage_min", "coverage_max",
]


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


@dataclass
class MachineResult:
    machine_id: str
    rows: list = field(default_factory=list)
    threshold_records: list = field(default_factory=list)
    errors: list = field(default_factory=list)


def _external_scores(cfg: ExperimentConfig, machine_id: str, run: int,
                     n_test: int) -> tuple[ScoreSeries, ScoreSeries | None]:
    det = cfg.detector
    test = load_scores(
        Path(cfg.data_root) / det.scores_pattern.format(machine=machine_id, run=run),
        det.orientation,
    )
    if len(test) != n_test:
        raise ValueError(
            f"score file has {len(test)} values but the test set has {n_test}"
        )
    train = None
    if det.train_scores_pattern:
        train = load_scores(
            Path(cfg.data_root)
            / det.train_scores_pattern.format(machine=machine_id, run=run),
            det.orientation,
        )
    return test, train


def _fit_scores(cfg: ExperimentConfig, dataset: MachineDataset
                ) -> tuple[ScoreSeries, ScoreSeries]:
    if cfg.detector.kind == "pca":
        detector = PcaDetector(cfg.detector.tau, cfg.detector.mode)
    else:
        detector = MeanDetector()
    test = score_series(detector, dataset)
    train = train_score_series(detector, dataset)
    return test, train


def _threshold_cell(cfg: ExperimentConfig, method: str, machine_id: str,
                    test: ScoreSeries, train: ScoreSeries | None, labels
                    ) -> tuple[float, dict]:
    if method == "pot":
        if train is None:
            raise ValueError("POT needs training scores")
        result = pot_threshold(
            train, PotConfig(level=cfg.pot.level_for(machine_id), q=cfg.pot.q)
        )
        return result.threshold, result.to_record()
    th, triple = grid_search(test, labels, cfg.gs.grid, cfg.gs.protocol)
    return th, {
        "method": "gs",
        "th": th,
        "precision": triple.precision,
        "recall": triple.recall,
        "f1": triple.f1,
        "protocol": cfg.gs.protocol.value,
    }


def evaluate_machine(cfg: ExperimentConfig, machine_id: str) -> MachineResult:
    """All (run, method, protocol) cells for one machine; errors are collected
    per cell so one bad cell never aborts the rest."""
    out = MachineResult(machine_id)
    try:
        dataset = load_machine(cfg.data_root, machine_id)
    except Exception as exc:  # noqa: BLE001 - reported, run continues
        out.errors.append(f"{machine_id}: {exc}")
        return out
    segments = dataset.segments()
    labels = dataset.labels
    fitted: tuple[ScoreSeries, ScoreSeries] | None = None
    for run in range(1, cfg.runs + 1):
        try:
            if cfg.detector.kind == "external":
                test, train = _external_scores(cfg, machine_id, run, len(labels))
            else:
                if fitted is None:
                    fitted = _fit_scores(cfg, dataset)
                test, train = fitted
        except Exception as exc:  # noqa: BLE001
            out.errors.append(f"{machine_id} run {run}: {exc}")
            continue
        for method in cfg.methods:
            try:
                th, record = _threshold_cell(cfg, method, machine_id, test,
                                             train, labels)
            except Exception as exc:  # noqa: BLE001
                out.errors.append(f"{machine_id} run {run} {method}: {exc}")
                continue
            record.update({"machine": machine_id, "run": run})
            out.threshold_records.append(record)
            pred_raw = apply_threshold(test, th)
            diag = segment_metrics(pred_raw, segments)
            for protocol in cfg.protocols:
                pred = (point_adjust(pred_raw, segments)
                        if protocol is Protocol.PA else pred_raw)
                counts = confusion(pred, labels)
                triple = prf1(counts)
                out.rows.append({
                    "machine": machine_id,
                    "run": run,
                    "method": method,
                    "protocol": protocol.value,
                    "threshold": th,
                    "tp": counts.tp, "fp": counts.fp,
                    "fn": counts.fn, "tn": counts.tn,
                    "precision": triple.precision,
                    "recall": triple.recall,
                    "f1": triple.f1,
                    "episodes_detected": diag.episodes_detected,
                    "anomaly_episodes": diag.anomaly_episodes,
                    "segments_detected": diag.segments_detected,
                    "coverage_mean": diag.coverage_mean,
                    "coverage_std": diag.coverage_std,
                    "coverage_min": diag.coverage_min,
                    "coverage_max": diag.coverage_max,
                })
    return out


def _triple_dict(triple) -> dict:
    return {"precision": triple.precision, "recall": triple.recall,
            "f1": triple.f1}


def _panel_dict(panel: AggregatePanel, machine_ids: list[str]) -> dict:
    def assignment(runs: np.ndarray) -> dict:
        return {mid: int(j) + 1 for mid, j in zip(machine_ids, runs)}

    out = {
        "mean": _triple_dict(panel.mean),
        "sigma_runs": _triple_dict(panel.sigma_runs),
        "sigma_runs_defined": panel.sigma_runs_defined,
        "min": {**_triple_dict(panel.min_metrics),
                "assignment": assignment(panel.min_assignment)},
        "max": {**_triple_dict(panel.max_metrics),
                "assignment": assignment(panel.max_assignment)},
    }
    if panel.sigma_machines is not None:
        out["sigma_machines"] = _triple_dict(panel.sigma_machines)
        out["sigma_machines_defined"] = panel.sigma_machines_defined
    return out


def _aggregate_method(cfg: ExperimentConfig, rows: list[dict], method: str,
                      protocol: Protocol) -> dict | None:
    """Panels for one method x protocol over machines with complete runs."""
    by_machine: dict[str, dict[int, dict]] = {}
    for row in rows:
        if row["method"] == method and row["protocol"] == protocol.value:
            by_machine.setdefault(row["machine"], {})[row["run"]] = row
    included = [m for m in cfg.machines
                if len(by_machine.get(m, {})) == cfg.runs]
    excluded = [m for m in cfg.machines if m not in included]
    if not included:
        return None

    def cell(m: str, run: int, key: str):
        return by_machine[m][run][key]

    grid = MetricGrid(
        included,
        [[cell(m, j, "tp") for j in range(1, cfg.runs + 1)] for m in included],
        [[cell(m, j, "fp") for j in range(1, cfg.runs + 1)] for m in included],
        [[cell(m, j, "fn") for j in range(1, cfg.runs + 1)] for m in included],
        [[cell(m, j, "precision") for j in range(1, cfg.runs + 1)] for m in included],
        [[cell(m, j, "recall") for j in range(1, cfg.runs + 1)] for m in included],
        [[cell(m, j, "f1") for j in range(1, cfg.runs + 1)] for m in included],
    )
    panels = {
        strategy.value: _panel_dict(
            aggregate(grid, strategy, cfg.restarts, cfg.seed), included
        )
        for strategy in Strategy
    }
    return {"machines": included, "excluded": excluded, "panels": panels}


def _rows_csv(rows: list[dict]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=METRICS_COLUMNS,
                            lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buffer.getvalue()


def cmd_run(args) -> int:
    try:
        cfg = load_experiment(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    jobs = max(1, args.jobs or os.cpu_count() or 1)
    if jobs == 1 or len(cfg.machines) == 1:
        results = [evaluate_machine(cfg, m) for m in cfg.machines]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(evaluate_machine,
                                    [cfg] * len(cfg.machines), cfg.machines))
    order = {m: i for i, m in enumerate(cfg.machines)}
    results.sort(key=lambda r: order[r.machine_id])

    rows = [row for res in results for row in res.rows]
    records = [rec for res in results for rec in res.threshold_records]
    errors = [err for res in results for err in res.errors]

    aggregates = {"runs": cfg.runs, "seed": cfg.seed, "methods": {}}
    for method in cfg.methods:
        aggregates["methods"][method] = {}
        for protocol in cfg.protocols:
            block = _aggregate_method(cfg, rows, method, protocol)
            if block is not None:
                aggregates["methods"][method][protocol.value] = block

    out = Path(cfg.output_dir)
    _atomic_write(out / "metrics.csv", _rows_csv(rows))
    _atomic_write(out / "thresholds.json",
                  json.dumps(records, indent=2, sort_keys=True) + "\n")
    _atomic_write(out / "aggregates.json",
                  json.dumps(aggregates, indent=2, sort_keys=True) + "\n")
    for err in errors:
        print(f"cell failed: {err}", file=sys.stderr)
    if errors:
        print(f"{len(errors)} cell(s) failed; reports cover the rest",
              file=sys.stderr)
        return 1
    return 0


def cmd_summarize(args) -> int:
    root = args.data or os.environ.get(DATA_ROOT_ENV)
    if not root:
        print(f"error: --data not given and {DATA_ROOT_ENV} is not set",
              file=sys.stderr)
        return 2
    machines = args.machines.split(",") if args.machines else list(SMD_MACHINES)
    missing = []
    for machine in machines:
        for sub in ("train", "test", "test_label"):
            path = Path(root) / sub / f"machine-{machine}.txt"
            if not path.is_file():
                missing.append(str(path))
    if missing:
        print("error: missing machine files:", file=sys.stderr)
        for path in missing:
            print(f"  {path}", file=sys.stderr)
        return 1
    summaries = [summarize(load_machine(root, m)) for m in machines]
    text = summary_csv(summaries, include_all=True)
    if args.out:
        _atomic_write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_synth(args) -> int:
    try:
        cfg = load_synth(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    dataset, segments = generate_synthetic(cfg)
    try:
        write_smd_layout(dataset, args.out)
    except OSError as exc:
        print(f"error: cannot write dataset: {exc}", file=sys.stderr)
        return 1
    print(f"wrote machine-{cfg.machine_id} ({cfg.train_len}+{cfg.test_len} "
          f"points, {len(segments)} anomaly segments) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsadbench",
        description="Benchmark multivariate time-series anomaly detectors "
                    "under one thresholding and evaluation protocol.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summarize", help="dataset label statistics as CSV")
    p.add_argument("--data", help=f"dataset root (default: ${DATA_ROOT_ENV})")
    p.add_argument("--machines", help="comma-separated machine ids")
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("run", help="execute a benchmark configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=None,
                   help="machine-level workers (default: all cores)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
