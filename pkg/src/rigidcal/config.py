"""Configuration documents for the CLI pipeline.

One JSON file drives a calibration run: the base sensor, the sensors to
calibrate against it, and every threshold of the pipeline (all exposed with
their defaults). Relative paths are resolved against the config file's
directory, and referenced files must exist at load time.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .observability import DEFAULT_THRESHOLD


@dataclass
class SensorEntry:
    frame: str
    imu_csv: str
    cloud_ply: str | None = None
    t_init_m: tuple = (0.0, 0.0, 0.0)
    bounds_margin_m: float = 0.3


@dataclass
class Thresholds:
    rest_tau_mps2: float = 0.15
    min_rest_s: float = 2.0
    line_angle_deg: float = 5.0
    line_dist_m: float = 0.5
    plane_angle_deg: float = 1.0
    plane_dist_m: float = 0.3
    observability: float = DEFAULT_THRESHOLD
    window_s: float = 10.0

    def validate(self):
        for name, value in asdict(self).items():
            if value <= 0:
                raise ConfigError(f"threshold {name} must be positive, got {value}")


@dataclass
class PipelineConfig:
    base: SensorEntry
    sensors: list[SensorEntry]
    thresholds: Thresholds = field(default_factory=Thresholds)
    n_line_pairs: int = 100
    seed: int = 0
    grid_rate_hz: float = 100.0
    madgwick_beta: float = 0.05
    box_min_m: tuple = (0.0, -10.0, -10.0)
    box_max_m: tuple = (50.0, 10.0, 10.0)

    def validate(self, base_dir: Path | None = None):
        self.thresholds.validate()
        if self.n_line_pairs <= 0:
            raise ConfigError("n_line_pairs must be positive")
        if not self.sensors:
            raise ConfigError("config needs at least one sensor entry")
        frames = [self.base.frame] + [s.frame for s in self.sensors]
        if len(set(frames)) != len(frames):
            raise ConfigError("sensor frames must be unique")
        for entry in [self.base, *self.sensors]:
            for attr in ("imu_csv", "cloud_ply"):
                rel = getattr(entry, attr)
                if rel is None:
                    continue
                path = _resolve(rel, base_dir)
                if not path.exists():
                    raise ConfigError(f"{entry.frame}: {attr} file not found: {path}")

    def resolve_path(self, rel: str, base_dir: Path | None) -> Path:
        return _resolve(rel, base_dir)

    def to_dict(self) -> dict:
        return {
            "base": asdict(self.base),
            "sensors": [asdict(s) for s in self.sensors],
            "thresholds": asdict(self.thresholds),
            "n_line_pairs": self.n_line_pairs,
            "seed": self.seed,
            "grid_rate_hz": self.grid_rate_hz,
            "madgwick_beta": self.madgwick_beta,
            "box_min_m": list(self.box_min_m),
            "box_max_m": list(self.box_max_m),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        try:
            base = SensorEntry(**doc["base"])
            sensors = [SensorEntry(**s) for s in doc["sensors"]]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid config document: {exc}") from exc
        thresholds = Thresholds(**doc.get("thresholds", {}))
        known = {"base", "sensors", "thresholds"}
        extras = {k: v for k, v in doc.items() if k not in known}
        allowed = {"n_line_pairs", "seed", "grid_rate_hz", "madgwick_beta", "box_min_m", "box_max_m"}
        unknown = set(extras) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(base=base, sensors=sensors, thresholds=thresholds, **extras)

    @classmethod
    def load(cls, path) -> tuple["PipelineConfig", Path]:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        cfg = cls.from_dict(doc)
        base_dir = path.parent
        cfg.validate(base_dir)
        return cfg, base_dir

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    # convenience accessors ------------------------------------------------

    def line_gate_rad(self) -> float:
        return math.radians(self.thresholds.line_angle_deg)

    def plane_gate_rad(self) -> float:
        return math.radians(self.thresholds.plane_angle_deg)


def _resolve(rel: str, base_dir: Path | None) -> Path:
    p = Path(rel)
    if p.is_absolute() or base_dir is None:
        return p
    return base_dir / p


@dataclass
class SimSensor:
    """Mounting and noise description of one simulated sensor."""

    frame: str
    yaw_deg: float = 0.0
    roll_deg: float = 0.0
    pitch_deg: float = 0.0
    translation_m: tuple = (0.0, 0.0, 0.0)
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    accel_bias: tuple = (0.0, 0.0, 0.0)
    sigma_omega: float = 0.005
    sigma_accel: float = 0.05
    # offset applied to the true translation when writing the calibration
    # config, mimicking a rough CAD-derived initial guess
    t_init_offset_m: tuple = (0.05, -0.04, 0.03)


@dataclass
class SimulateConfig:
    preset: str = "figure8"
    duration_s: float = 60.0
    rate_hz: float = 100.0
    scene_noise_m: float = 0.005
    base_frame: str = "B"
    sensors: list[SimSensor] = field(
        default_factory=lambda: [
            SimSensor(frame="L1", yaw_deg=45.0, translation_m=(0.23, 0.075, 0.0))
        ]
    )

    @classmethod
    def from_dict(cls, doc: dict) -> "SimulateConfig":
        doc = dict(doc)
        sensors = [SimSensor(**s) for s in doc.pop("sensors", [])]
        cfg = cls(**doc)
        if sensors:
            cfg.sensors = sensors
        return cfg

    @classmethod
    def load(cls, path) -> "SimulateConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"{path}: invalid simulate config: {exc}") from exc
