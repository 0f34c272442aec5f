"""File formats: IMU CSV, ASCII PLY / XYZ CSV clouds, extrinsics JSON.

The simulator writes the same formats the pipeline ingests, so every reader
here is exercised against the corresponding writer.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .errors import ConfigError
from .geometry import RigidTransform, quat_from_matrix, quat_to_matrix
from .imu import ImuSeries

IMU_CSV_HEADER = ["t_ns", "wx", "wy", "wz", "ax", "ay", "az"]


def write_imu_csv(path, series: ImuSeries) -> None:
    """One sample per row, SI units, header ``t_ns,wx,wy,wz,ax,ay,az``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(IMU_CSV_HEADER)
        for t, w, a in zip(series.t_ns, series.omega, series.accel):
            writer.writerow([int(t), *(repr(float(v)) for v in w), *(repr(float(v)) for v in a)])


def read_imu_csv(path, frame: str = "I", rate_hz: float | None = None) -> ImuSeries:
    """Parse an IMU CSV; the nominal rate defaults to the median sample rate."""
    path = Path(path)
    rows = []
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != IMU_CSV_HEADER:
            raise ConfigError(f"{path}: expected header {','.join(IMU_CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 7:
                raise ConfigError(f"{path}:{lineno}: expected 7 columns, got {len(row)}")
            rows.append(row)
    if len(rows) < 2:
        raise ConfigError(f"{path}: needs at least 2 samples")
    t_ns = np.array([int(r[0]) for r in rows], dtype=np.int64)
    vals = np.array([[float(v) for v in r[1:]] for r in rows])
    if rate_hz is None:
        rate_hz = 1e9 / float(np.median(np.diff(t_ns)))
    return ImuSeries(frame, rate_hz, t_ns, vals[:, :3], vals[:, 3:])


def write_ply(path, cloud: PointCloud) -> None:
    """ASCII PLY with a single vertex element (float x, y, z)."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"comment frame {cloud.frame}\n")
        fh.write(f"element vertex {len(cloud)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("end_header\n")
        for p in cloud.points:
            fh.write(f"{repr(float(p[0]))} {repr(float(p[1]))} {repr(float(p[2]))}\n")


def read_ply(path, frame: str | None = None) -> PointCloud:
    path = Path(path)
    with path.open() as fh:
        line = fh.readline().strip()
        if line != "ply":
            raise ConfigError(f"{path}: not a PLY file")
        n_vertex = None
        file_frame = None
        fmt = None
        while True:
            line = fh.readline()
            if not line:
                raise ConfigError(f"{path}: missing end_header")
            line = line.strip()
            if line.startswith("format"):
                fmt = line.split()[1]
            elif line.startswith("comment frame "):
                file_frame = line.split("comment frame ", 1)[1].strip()
            elif line.startswith("element vertex"):
                n_vertex = int(line.split()[-1])
            elif line == "end_header":
                break
        if fmt != "ascii":
            raise ConfigError(f"{path}: only ASCII PLY is supported")
        if n_vertex is None:
            raise ConfigError(f"{path}: no vertex element")
        if n_vertex == 0:
            pts = np.zeros((0, 3))
        else:
            pts = np.loadtxt(fh, dtype=float, max_rows=n_vertex, ndmin=2)
    if pts.shape[0] != n_vertex:
        raise ConfigError(f"{path}: expected {n_vertex} vertices, got {pts.shape[0]}")
    return PointCloud(frame or file_frame or "L", pts[:, :3])


def read_xyz_csv(path, frame: str = "L") -> PointCloud:
    """Plain x,y,z rows (optional header) as a point cloud."""
    path = Path(path)
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if lineno == 1 and not _is_float(parts[0]):
                continue  # header
            if len(parts) < 3:
                raise ConfigError(f"{path}:{lineno}: expected 3 columns")
            rows.append([float(v) for v in parts[:3]])
    return PointCloud(frame, np.array(rows) if rows else np.zeros((0, 3)))


def _is_float(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def transform_to_dict(t: RigidTransform) -> dict:
    return {
        "from_frame": t.from_frame,
        "to_frame": t.to_frame,
        "quaternion_wxyz": [float(v) for v in quat_from_matrix(t.rotation)],
        "translation_m": [float(v) for v in t.translation],
    }


def transform_from_dict(d: dict) -> RigidTransform:
    try:
        rot = quat_to_matrix(np.asarray(d["quaternion_wxyz"], dtype=float))
        return RigidTransform(
            rot, np.asarray(d["translation_m"], dtype=float), d["from_frame"], d["to_frame"]
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid transform document: {exc}") from exc


def write_extrinsics_json(path, transforms: dict[str, RigidTransform]) -> None:
    doc = {name: transform_to_dict(t) for name, t in transforms.items()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_extrinsics_json(path) -> dict[str, RigidTransform]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return {name: transform_from_dict(d) for name, d in doc.items()}
