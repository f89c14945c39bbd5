"""Experiment configuration: TOML parsing and upfront validation.

Every knob a run needs is resolved and checked here, so the orchestrator can
assume a well-formed plan: dataset root and machine list, detector choice,
enabled thresholding methods with their parameters, evaluation protocols,
and the run/seed/output settings.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .core import Orientation
from .detectors import ScoreMode
from .evaluate import Protocol
from .ingest import DATA_ROOT_ENV, SMD_MACHINES, SynthConfig
from .thresholds import (
    DEFAULT_GROUP_LEVELS,
    DEFAULT_RISK,
    DEFAULT_STEP_RANGE,
    GridSpec,
    LinSpace,
    StepRange,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """The configuration file is missing, unreadable, or inconsistent."""


@dataclass(frozen=True)
class DetectorConfig:
    kind: str  # pca | mean | external
    tau: float = 0.5
    mode: ScoreMode = ScoreMode.RESIDUAL
    scores_pattern: str | None = None
    train_scores_pattern: str | None = None
    orientation: Orientation = Orientation.LOWER_ANOMALOUS


@dataclass(frozen=True)
class PotMethodConfig:
    q: float = DEFAULT_RISK
    level: float | None = None
    group_levels: dict = field(default_factory=lambda: dict(DEFAULT_GROUP_LEVELS))

    def level_for(self, machine_id: str) -> float:
        if self.level is not None:
            return self.level
        group = machine_id.split("-", 1)[0]
        if group not in self.group_levels:
            raise ConfigError(
                f"no POT level for machine {machine_id!r}: group {group!r} not in "
                f"{sorted(self.group_levels)} and no explicit level set"
            )
        return float(self.group_levels[group])


@dataclass(frozen=True)
class GsMethodConfig:
    grid: GridSpec = DEFAULT_STEP_RANGE
    protocol: Protocol = Protocol.PA


@dataclass(frozen=True)
class ExperimentConfig:
    data_root: Path
    machines: list[str]
    detector: DetectorConfig
    pot: PotMethodConfig | None
    gs: GsMethodConfig | None
    protocols: list[Protocol]
    runs: int
    seed: int
    output_dir: Path
    restarts: int = 16

    @property
    def methods(self) -> list[str]:
        out = []
        if self.pot is not None:
            out.append("pot")
        if self.gs is not None:
            out.append("gs")
        return out


def _load_toml(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _enum(table: dict, key: str, enum_cls, default):
    raw = table.get(key)
    if raw is None:
        return default
    try:
        return enum_cls(raw)
    except ValueError:
        choices = ", ".join(e.value for e in enum_cls)
        raise ConfigError(f"{key} must be one of: {choices}; got {raw!r}") from None


def _detector(table: dict) -> DetectorConfig:
    kind = table.get("kind", "pca")
    if kind not in ("pca", "mean", "external"):
        raise ConfigError(f"detector.kind must be pca, mean or external, got {kind!r}")
    cfg = DetectorConfig(
        kind=kind,
        tau=float(table.get("tau", 0.5)),
        mode=_enum(table, "mode", ScoreMode, ScoreMode.RESIDUAL),
        scores_pattern=table.get("scores"),
        train_scores_pattern=table.get("train_scores"),
        orientation=_enum(table, "orientation", Orientation,
                          Orientation.LOWER_ANOMALOUS),
    )
    if not 0.0 < cfg.tau <= 1.0:
        raise ConfigError(f"detector.tau must be in (0, 1], got {cfg.tau}")
    if kind == "external":
        if not cfg.scores_pattern:
            raise ConfigError("external detector needs detector.scores pattern")
        if "{machine}" not in cfg.scores_pattern:
            raise ConfigError("detector.scores pattern must contain {machine}")
    return cfg


def _pot(table: dict) -> PotMethodConfig | None:
    if not table.get("enabled", True):
        return None
    levels = table.get("levels", dict(DEFAULT_GROUP_LEVELS))
    cfg = PotMethodConfig(
        q=float(table.get("q", DEFAULT_RISK)),
        level=float(table["level"]) if "level" in table else None,
        group_levels={str(k): float(v) for k, v in levels.items()},
    )
    if not 0.0 < cfg.q < 1.0:
        raise ConfigError(f"pot.q must be in (0,1), got {cfg.q}")
    for lv in ([cfg.level] if cfg.level is not None else cfg.group_levels.values()):
        if not 0.0 < lv < 1.0:
            raise ConfigError(f"pot level must be in (0,1), got {lv}")
    return cfg


def _gs(table: dict, detector: DetectorConfig) -> GsMethodConfig | None:
    if not table.get("enabled", True):
        return None
    # External lower-anomalous scores use the reference step grid; fitted
    # detectors default to a linspace over the test scores with the same
    # threshold budget.
    default_kind = "step" if detector.kind == "external" else "linspace"
    kind = table.get("grid", default_kind)
    if kind == "step":
        grid: GridSpec = StepRange(
            float(table.get("lo", DEFAULT_STEP_RANGE.lo)),
            float(table.get("hi", DEFAULT_STEP_RANGE.hi)),
            float(table.get("step", DEFAULT_STEP_RANGE.step)),
        )
    elif kind == "linspace":
        grid = LinSpace(int(table.get("count", DEFAULT_STEP_RANGE.count)))
    else:
        raise ConfigError(f"gs.grid must be step or linspace, got {kind!r}")
    return GsMethodConfig(grid=grid, protocol=_enum(table, "protocol",
                                                    Protocol, Protocol.PA))


def load_experiment(path) -> ExperimentConfig:
    """Parse and validate a run configuration file."""
    doc = _load_toml(path)
    dataset = doc.get("dataset", {})
    root = dataset.get("root") or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise ConfigError(
            f"dataset.root missing and {DATA_ROOT_ENV} is not set"
        )
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"dataset root is not a directory: {root}")
    machines = [str(m) for m in dataset.get("machines", SMD_MACHINES)]
    if not machines:
        raise ConfigError("dataset.machines must not be empty")
    if len(set(machines)) != len(machines):
        raise ConfigError("dataset.machines contains duplicates")

    detector = _detector(doc.get("detector", {}))
    thresholds = doc.get("thresholds", {})
    pot = _pot(thresholds.get("pot", {}))
    gs = _gs(thresholds.get("gs", {}), detector)
    if pot is None and gs is None:
        raise ConfigError("at least one thresholding method must be enabled")

    if pot is not None:
        for machine in machines:
            pot.level_for(machine)
        if detector.kind == "external" and not detector.train_scores_pattern:
            raise ConfigError(
                "POT thresholding of external scores needs detector.train_scores"
            )

    evaluation = doc.get("evaluation", {})
    try:
        protocols = [Protocol(p)
                     for p in evaluation.get("protocols", ["pa", "pointwise"])]
    except ValueError:
        raise ConfigError(
            "evaluation.protocols entries must be 'pa' or 'pointwise'"
        ) from None
    if not protocols:
        raise ConfigError("evaluation.protocols must not be empty")

    run = doc.get("run", {})
    runs = int(run.get("runs", 1))
    if runs < 1:
        raise ConfigError(f"run.runs must be >= 1, got {runs}")
    output = run.get("output")
    if not output:
        raise ConfigError("run.output directory is required")
    return ExperimentConfig(
        data_root=root,
        machines=machines,
        detector=detector,
        pot=pot,
        gs=gs,
        protocols=protocols,
        runs=runs,
        seed=int(run.get("seed", 0)),
        output_dir=Path(output),
        restarts=int(evaluation.get("restarts", 16)),
    )


def load_synth(path) -> SynthConfig:
    """Parse a synthetic-dataset configuration file."""
    doc = _load_toml(path)
    table = doc.get("synth", doc)
    try:
        return SynthConfig(
            channels=int(table["channels"]),
            train_len=int(table["train_len"]),
            test_len=int(table["test_len"]),
            rank=int(table["rank"]),
            noise=float(table.get("noise", 0.1)),
            segment_count=int(table.get("segments", 5)),
            seg_len_min=int(table.get("seg_len_min", 10)),
            seg_len_max=int(table.get("seg_len_max", 50)),
            magnitude=float(table.get("magnitude", 10.0)),
            seed=int(table.get("seed", 0)),
            machine_id=str(table.get("machine_id", "synth-1")),
        )
    except KeyError as exc:
        raise ConfigError(f"synth config missing key {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad synth config: {exc}") from exc
