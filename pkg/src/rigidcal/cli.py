"""Command-line interface.

Subcommands: ``simulate`` writes a synthetic dataset, ``calibrate`` runs the
full pipeline from a config, ``observability`` gates an IMU stream's motion
windows, ``verify`` checks given extrinsics against two clouds, and
``report`` summarizes a report file.

Exit codes: 0 success/verified, 1 usage or validation error, 2 quality-gate
failure, 3 inconclusive. Verbosity via the RIGIDCAL_LOG environment
variable (DEBUG/INFO/WARNING/ERROR).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .cloud import FeatureConfig, extract_features, verify_extrinsics
from .config import PipelineConfig, SimulateConfig
from .errors import ConfigError, NoPlanes, RigidCalError
from .io import read_extrinsics_json, read_imu_csv, read_ply
from .observability import DEFAULT_THRESHOLD, DEFAULT_WINDOW_S, segment_select
from .pipeline import CalibrationReport, run_calibration, simulate_dataset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_GATE = 2
EXIT_INCONCLUSIVE = 3

logger = logging.getLogger("rigidcal")


def _setup_logging():
    level = os.environ.get("RIGIDCAL_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rigidcal",
        description="Target-less multi-sensor extrinsic calibration",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="write a synthetic dataset")
    p_sim.add_argument("--output", required=True, help="output directory")
    p_sim.add_argument(
        "--preset",
        default="figure8",
        choices=["figure8", "straight", "slow_turn", "rest_then_drive"],
    )
    p_sim.add_argument("--config", help="simulate-config JSON overriding the preset defaults")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--duration", type=float, help="trajectory duration [s]")

    p_cal = sub.add_parser("calibrate", help="run the calibration pipeline")
    p_cal.add_argument("--config", required=True, help="pipeline config JSON")
    p_cal.add_argument("--output", help="directory for report.json (default: config directory)")
    p_cal.add_argument("--seed", type=int, help="override the config seed")
    p_cal.add_argument("--imu-only", action="store_true", help="skip the point-cloud stages")
    p_cal.add_argument(
        "--deterministic",
        action="store_true",
        help="exclude wall-clock timings so identical runs produce identical reports",
    )

    p_obs = sub.add_parser("observability", help="gate the motion windows of one IMU stream")
    p_obs.add_argument("imu_csv", help="IMU CSV file")
    p_obs.add_argument("--window", type=float, default=DEFAULT_WINDOW_S)
    p_obs.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p_obs.add_argument("--output", help="directory for segments.json / segments.csv")

    p_ver = sub.add_parser("verify", help="verify extrinsics against two point clouds")
    p_ver.add_argument("base_cloud", help="base-sensor PLY")
    p_ver.add_argument("sensor_cloud", help="sensor PLY")
    p_ver.add_argument("extrinsics_json", help="extrinsics document")
    p_ver.add_argument("--sensor-frame", help="entry to use when the document has several")
    p_ver.add_argument("--plane-angle-deg", type=float, default=1.0)
    p_ver.add_argument("--plane-dist-m", type=float, default=0.3)
    p_ver.add_argument("--seed", type=int, default=0)

    p_rep = sub.add_parser("report", help="summarize a calibration report")
    p_rep.add_argument("report_json")
    return parser


def cmd_simulate(args) -> int:
    sim = SimulateConfig.load(args.config) if args.config else SimulateConfig()
    sim.preset = args.preset
    if args.duration is not None:
        sim.duration_s = args.duration
    manifest = simulate_dataset(sim, args.output, seed=args.seed)
    print(json.dumps(manifest, indent=2))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    config, base_dir = PipelineConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    report = run_calibration(
        config, base_dir, imu_only=args.imu_only, deterministic=args.deterministic
    )
    out_dir = Path(args.output) if args.output else base_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"report written to {report_path}")
    _print_report_summary(report)
    failed = any(r.get("error") or r.get("verified") is False for r in report.results)
    return EXIT_GATE if failed else EXIT_OK


def _print_report_summary(report: CalibrationReport) -> None:
    for r in report.results:
        frame = r.get("sensor_frame", "?")
        if r.get("error"):
            print(f"  {frame}: FAILED ({r['error']})")
            continue
        euler = r.get("final_euler_deg")
        t = r.get("t_final", {}).get("translation_m") if r.get("t_final") else None
        verified = r.get("verified")
        status = {True: "verified", False: "REJECTED", None: "unverified (no planes)"}[verified]
        if euler is not None and t is not None:
            print(
                f"  {frame}: rpy=({euler[0]:+.3f}, {euler[1]:+.3f}, {euler[2]:+.3f}) deg "
                f"t=({t[0]:+.3f}, {t[1]:+.3f}, {t[2]:+.3f}) m [{status}]"
            )
        else:
            print(f"  {frame}: [{status}]")


def cmd_observability(args) -> int:
    series = read_imu_csv(args.imu_csv)
    reports = segment_select(series.t_ns, series.omega, args.window, args.threshold)
    docs = [r.to_dict() for r in reports]
    accepted = sum(1 for r in reports if r.accepted)
    print(f"{accepted}/{len(reports)} windows accepted (threshold {args.threshold:g})")
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "segments.json").write_text(json.dumps(docs, indent=2) + "\n")
        lines = ["t_start_ns,t_end_ns,sigma1,sigma2,sigma3,accepted"]
        for d in docs:
            sv = d["singular_values"]
            lines.append(
                f"{d['t_start_ns']},{d['t_end_ns']},{sv[0]!r},{sv[1]!r},{sv[2]!r},{int(d['accepted'])}"
            )
        (out / "segments.csv").write_text("\n".join(lines) + "\n")
        print(f"segment data written to {out}")
    return EXIT_OK if accepted >= 1 else EXIT_GATE


def cmd_verify(args) -> int:
    base_cloud = read_ply(args.base_cloud)
    sensor_cloud = read_ply(args.sensor_cloud)
    doc = read_extrinsics_json(args.extrinsics_json)
    if args.sensor_frame is not None:
        if args.sensor_frame not in doc:
            raise ConfigError(f"no entry {args.sensor_frame!r} in {args.extrinsics_json}")
        t_final = doc[args.sensor_frame]
    elif len(doc) == 1:
        t_final = next(iter(doc.values()))
    else:
        raise ConfigError("extrinsics document has several entries; use --sensor-frame")

    cfg = FeatureConfig()
    _, planes_base = extract_features(base_cloud, cfg, seed=args.seed)
    _, planes_sensor = extract_features(sensor_cloud, cfg, seed=args.seed + 1)
    try:
        ok, diag = verify_extrinsics(
            planes_base,
            planes_sensor,
            t_final,
            math.radians(args.plane_angle_deg),
            args.plane_dist_m,
        )
    except NoPlanes as exc:
        print(f"inconclusive: {exc}")
        return EXIT_INCONCLUSIVE
    print(json.dumps(diag, indent=2))
    print("verified" if ok else "rejected")
    return EXIT_OK if ok else EXIT_GATE


def cmd_report(args) -> int:
    try:
        doc = json.loads(Path(args.report_json).read_text())
        report = CalibrationReport.from_dict(doc)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot read report: {exc}") from exc
    print(f"report: {args.report_json}")
    print(f"  deterministic: {report.deterministic}")
    print(f"  sensors: {len(report.results)}")
    _print_report_summary(report)
    return EXIT_OK


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": cmd_simulate,
        "calibrate": cmd_calibrate,
        "observability": cmd_observability,
        "verify": cmd_verify,
        "report": cmd_report,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RigidCalError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GATE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
