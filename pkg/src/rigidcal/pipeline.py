"""End-to-end orchestration of the calibration stages.

Stage order per sensor: inertial signal matching seeds the point-cloud
alignment, line features refine it, plane features verify it. On a failed
verification the point-cloud stages are re-run once from the refined
estimate before the pair is reported unverified. The final extrinsics
factor as refined o alignment o inertial o initial, and the recomposition
is checked on construction.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .config import PipelineConfig, SensorEntry, SimulateConfig
from .errors import ConfigError, RigidCalError
from .estimators import ImuExtrinsicCalibrator, PointCloudCalibrator
from .geometry import RigidTransform, euler_zyx, rotation_zyx
from .imu import ImuSeries
from .io import (
    read_imu_csv,
    read_ply,
    transform_from_dict,
    transform_to_dict,
    write_extrinsics_json,
    write_imu_csv,
    write_ply,
)
from .sim import (
    SceneSpec,
    SensorMountSpec,
    TrajectorySpec,
    default_scene,
    gen_trajectory,
    synth_imu,
    synth_scene,
)

logger = logging.getLogger(__name__)

_RECOMPOSE_TOL = 1e-12


@dataclass
class CalibrationResult:
    """Per-sensor-pair outcome with the full stage factorization."""

    sensor_frame: str
    base_frame: str
    t_init: RigidTransform
    t_imu: RigidTransform
    t_gicp: RigidTransform
    t_refined: RigidTransform
    t_final: RigidTransform
    verified: bool | None
    verification: dict = field(default_factory=dict)
    imu_rotation_residual_rms: float = 0.0
    imu_translation_residual_rms: float = 0.0
    icp_rms: float | None = None
    segment_reports: list = field(default_factory=list)
    bias_summaries: dict = field(default_factory=dict)
    stage_seconds: dict = field(default_factory=dict)
    error: str | None = None

    def __post_init__(self):
        recomposed = self.t_refined @ self.t_gicp @ self.t_imu @ self.t_init
        gap = np.abs(recomposed.as_matrix() - self.t_final.as_matrix()).max()
        if gap > _RECOMPOSE_TOL:
            raise RigidCalError(f"stage factorization does not recompose (gap {gap:.3e})")

    def to_dict(self, deterministic: bool = False) -> dict:
        doc = {
            "sensor_frame": self.sensor_frame,
            "base_frame": self.base_frame,
            "t_init": transform_to_dict(self.t_init),
            "t_imu": transform_to_dict(self.t_imu),
            "t_gicp": transform_to_dict(self.t_gicp),
            "t_refined": transform_to_dict(self.t_refined),
            "t_final": transform_to_dict(self.t_final),
            "final_euler_deg": [
                math.degrees(v) for v in euler_zyx(self.t_final.rotation)
            ],
            "verified": self.verified,
            "verification": self.verification,
            "imu_rotation_residual_rms": float(self.imu_rotation_residual_rms),
            "imu_translation_residual_rms": float(self.imu_translation_residual_rms),
            "icp_rms": None if self.icp_rms is None else float(self.icp_rms),
            "segment_reports": [r.to_dict() for r in self.segment_reports],
            "bias_summaries": self.bias_summaries,
            "stage_seconds": {} if deterministic else self.stage_seconds,
            "error": self.error,
        }
        return doc


@dataclass
class CalibrationReport:
    """Machine-readable run summary; serializes losslessly to JSON."""

    config: dict
    results: list[dict]
    deterministic: bool = False

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "results": self.results,
            "deterministic": self.deterministic,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CalibrationReport":
        return cls(
            config=doc["config"],
            results=doc["results"],
            deterministic=doc.get("deterministic", False),
        )

    def final_transforms(self) -> dict[str, RigidTransform]:
        return {
            r["sensor_frame"]: transform_from_dict(r["t_final"])
            for r in self.results
            if r.get("t_final") is not None
        }


@dataclass
class SensorData:
    entry: SensorEntry
    imu: ImuSeries
    cloud: PointCloud | None


def load_sensor_data(config: PipelineConfig, base_dir: Path, imu_only: bool = False):
    def load(entry: SensorEntry) -> SensorData:
        imu = read_imu_csv(config.resolve_path(entry.imu_csv, base_dir), frame=entry.frame)
        cloud = None
        if not imu_only and entry.cloud_ply is not None:
            cloud = read_ply(config.resolve_path(entry.cloud_ply, base_dir), frame=entry.frame)
        return SensorData(entry, imu, cloud)

    return load(config.base), [load(s) for s in config.sensors]


def calibrate_pair(
    base: SensorData,
    sensor: SensorData,
    config: PipelineConfig,
    imu_only: bool = False,
) -> CalibrationResult:
    """Run the staged calibration for one base/sensor pair."""
    th = config.thresholds
    stage_seconds: dict[str, float] = {}
    frame = sensor.entry.frame
    base_frame = base.entry.frame

    t_init = RigidTransform(
        np.eye(3), np.asarray(sensor.entry.t_init_m, dtype=float), frame, base_frame
    )

    tic = time.perf_counter()
    imu_cal = ImuExtrinsicCalibrator(
        grid_rate_hz=config.grid_rate_hz,
        window_s=th.window_s,
        obs_threshold=th.observability,
        bounds_margin=sensor.entry.bounds_margin_m,
        rest_tau=th.rest_tau_mps2,
        min_rest_s=th.min_rest_s,
        beta=config.madgwick_beta,
    )
    imu_cal.fit(base.imu, sensor.imu, np.asarray(sensor.entry.t_init_m, dtype=float))
    stage_seconds["imu"] = time.perf_counter() - tic

    pose_imu = imu_cal.extrinsics_
    t_imu = pose_imu @ t_init.inverse()
    identity_bb = RigidTransform.identity(base_frame, base_frame)
    bias_summaries = {
        f: cond.to_summary() for f, cond in imu_cal.conditioning_.items()
    }

    if imu_only or base.cloud is None or sensor.cloud is None:
        return CalibrationResult(
            sensor_frame=frame,
            base_frame=base_frame,
            t_init=t_init,
            t_imu=t_imu,
            t_gicp=identity_bb,
            t_refined=identity_bb,
            t_final=pose_imu,
            verified=None,
            verification={"inconclusive": "point clouds not provided"},
            imu_rotation_residual_rms=imu_cal.estimate_.rotation_residual_rms,
            imu_translation_residual_rms=imu_cal.estimate_.translation_residual_rms,
            segment_reports=imu_cal.estimate_.segment_reports,
            bias_summaries=bias_summaries,
            stage_seconds=stage_seconds,
        )

    def run_cloud_stage(init: RigidTransform, seed: int) -> PointCloudCalibrator:
        cal = PointCloudCalibrator(
            box_min=tuple(config.box_min_m),
            box_max=tuple(config.box_max_m),
            line_gate_deg=th.line_angle_deg,
            line_gate_m=th.line_dist_m,
            plane_gate_deg=th.plane_angle_deg,
            plane_gate_m=th.plane_dist_m,
            n_line_pairs=config.n_line_pairs,
            feature_seed=seed,
        )
        return cal.fit(sensor.cloud, base.cloud, init)

    tic = time.perf_counter()
    cloud_cal = run_cloud_stage(pose_imu, config.seed)
    stage_seconds["cloud"] = time.perf_counter() - tic

    if cloud_cal.verified_ is False:
        # one recomputation of the point-based alignment from the refined pose
        logger.info("%s: verification failed, re-running the point-cloud alignment", frame)
        tic = time.perf_counter()
        cloud_cal = run_cloud_stage(cloud_cal.extrinsics_, config.seed + 1)
        stage_seconds["cloud_retry"] = time.perf_counter() - tic

    t_full_icp = cloud_cal.icp_.transform
    t_gicp = t_full_icp @ pose_imu.inverse()
    t_refined = cloud_cal.refined_factor_
    t_final = cloud_cal.extrinsics_

    return CalibrationResult(
        sensor_frame=frame,
        base_frame=base_frame,
        t_init=t_init,
        t_imu=t_imu,
        t_gicp=t_gicp,
        t_refined=t_refined,
        t_final=t_final,
        verified=cloud_cal.verified_,
        verification=cloud_cal.verification_,
        imu_rotation_residual_rms=imu_cal.estimate_.rotation_residual_rms,
        imu_translation_residual_rms=imu_cal.estimate_.translation_residual_rms,
        icp_rms=cloud_cal.icp_.rms,
        segment_reports=imu_cal.estimate_.segment_reports,
        bias_summaries=bias_summaries,
        stage_seconds=stage_seconds,
    )


def run_calibration(
    config: PipelineConfig,
    base_dir: Path | None = None,
    imu_only: bool = False,
    deterministic: bool = False,
) -> CalibrationReport:
    """Calibrate every configured sensor against the base sensor.

    Stage errors are recorded per sensor; a partial report is always
    produced.
    """
    base, sensors = load_sensor_data(config, base_dir, imu_only)
    results = []
    for sensor in sensors:
        try:
            result = calibrate_pair(base, sensor, config, imu_only)
            results.append(result.to_dict(deterministic))
        except RigidCalError as exc:
            logger.error("%s: %s: %s", sensor.entry.frame, type(exc).__name__, exc)
            results.append(
                {
                    "sensor_frame": sensor.entry.frame,
                    "base_frame": base.entry.frame,
                    "t_final": None,
                    "verified": None,
                    "error": f"{type(exc).__name__}: {exc}",
                }
            )
    return CalibrationReport(
        config=config.to_dict(), results=results, deterministic=deterministic
    )


# ---------------------------------------------------------------------------
# dataset synthesis (the `simulate` command)
# ---------------------------------------------------------------------------


def _mount_transform(sensor) -> RigidTransform:
    rot = rotation_zyx(
        math.radians(sensor.roll_deg),
        math.radians(sensor.pitch_deg),
        math.radians(sensor.yaw_deg),
    )
    return RigidTransform(rot, np.asarray(sensor.translation_m, dtype=float), sensor.frame, "B")


def simulate_dataset(sim: SimulateConfig, output_dir, seed: int = 0) -> dict:
    """Write a synthetic dataset: IMU CSVs, cloud PLYs, truth, and a config.

    Returns a manifest of the files written. Deterministic under the seed.
    """
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory not writable: {out}: {exc}") from exc

    spec = TrajectorySpec(sim.preset, duration_s=sim.duration_s, rate_hz=sim.rate_hz)
    traj = gen_trajectory(spec, seed)
    scene = default_scene(noise_sigma=sim.scene_noise_m)

    manifest: dict = {"imu_csv": [], "cloud_ply": [], "truth_json": None, "config_json": None}

    base_mount = SensorMountSpec(
        RigidTransform.identity(sim.base_frame, "B"),
        sigma_omega=sim.sensors[0].sigma_omega if sim.sensors else 0.005,
        sigma_accel=sim.sensors[0].sigma_accel if sim.sensors else 0.05,
    )
    base_imu = synth_imu(traj, base_mount, seed=seed)
    base_imu_path = out / "base_imu.csv"
    write_imu_csv(base_imu_path, base_imu)
    manifest["imu_csv"].append(str(base_imu_path))

    base_pose_world = RigidTransform.identity(sim.base_frame, "W")
    base_cloud = synth_scene(scene, base_pose_world, seed=seed + 10_000)
    base_cloud_path = out / "base_cloud.ply"
    write_ply(base_cloud_path, base_cloud)
    manifest["cloud_ply"].append(str(base_cloud_path))

    truth: dict[str, RigidTransform] = {}
    entries = []
    for k, sensor in enumerate(sim.sensors, start=1):
        mount_bs = _mount_transform(sensor)
        truth[sensor.frame] = mount_bs
        mount = SensorMountSpec(
            mount_bs,
            gyro_bias=np.asarray(sensor.gyro_bias, dtype=float),
            accel_bias=np.asarray(sensor.accel_bias, dtype=float),
            sigma_omega=sensor.sigma_omega,
            sigma_accel=sensor.sigma_accel,
        )
        imu = synth_imu(traj, mount, seed=seed + k)
        imu_path = out / f"{sensor.frame}_imu.csv"
        write_imu_csv(imu_path, imu)
        manifest["imu_csv"].append(str(imu_path))

        pose_world = RigidTransform(mount_bs.rotation, mount_bs.translation, sensor.frame, "W")
        cloud = synth_scene(scene, pose_world, seed=seed + 10_000 + k)
        cloud_path = out / f"{sensor.frame}_cloud.ply"
        write_ply(cloud_path, cloud)
        manifest["cloud_ply"].append(str(cloud_path))

        t_init = np.asarray(sensor.translation_m, dtype=float) + np.asarray(
            sensor.t_init_offset_m, dtype=float
        )
        entries.append(
            SensorEntry(
                frame=sensor.frame,
                imu_csv=imu_path.name,
                cloud_ply=cloud_path.name,
                t_init_m=tuple(float(v) for v in t_init),
            )
        )

    truth_path = out / "truth.json"
    write_extrinsics_json(truth_path, truth)
    manifest["truth_json"] = str(truth_path)

    cfg = PipelineConfig(
        base=SensorEntry(frame=sim.base_frame, imu_csv=base_imu_path.name, cloud_ply=base_cloud_path.name),
        sensors=entries,
        seed=seed,
        grid_rate_hz=sim.rate_hz,
    )
    cfg_path = out / "config.json"
    cfg.save(cfg_path)
    manifest["config_json"] = str(cfg_path)
    return manifest
