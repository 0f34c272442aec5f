"""Ground-truth rigid-body simulation used to verify the calibration pipeline.

Trajectories are closed-form (sums of sinusoids with a smooth start ramp
where needed), so angular acceleration is exact rather than differenced and
the oracle contributes no differentiation error of its own. All randomness
flows from explicit seeds through a counter-based 64-bit generator (Philox),
so identical seeds give identical outputs across runs and platforms.

The figure-8 preset includes small roll/pitch sinusoids so that all three
rotational degrees of freedom are excited, which is what makes full
extrinsic observability achievable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .geometry import RigidTransform
from .imu import GRAVITY_W, ImuSeries
from .validation import check_vector3

TRAJECTORY_KINDS = ("figure8", "straight", "slow_turn", "rest_then_drive")


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; the single PRNG entry point of the oracle."""
    return np.random.Generator(np.random.Philox(seed))


# ---------------------------------------------------------------------------
# trajectory synthesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrajectorySpec:
    """Parameters of an analytic vehicle trajectory."""

    kind: str
    duration_s: float = 60.0
    rate_hz: float = 100.0
    turn_rate: float = 0.9  # peak yaw rate [rad/s]
    speed: float = 3.0  # path speed scale [m/s]
    tilt_excitation: float = math.radians(3.0)  # roll/pitch amplitude [rad]
    tilt_freq_hz: float = 0.3
    lobe_freq_hz: float = 0.08
    rest_duration_s: float = 5.0
    ramp_s: float = 4.0

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if self.rate_hz < 50.0:
            raise ValueError("rate_hz must be at least 50 Hz")


def _smoothstep(t, a: float, width: float):
    """Quintic smoothstep (C^2) and its first two derivatives."""
    t = np.asarray(t, dtype=float)
    if width <= 0.0:
        s = (t >= a).astype(float)
        return s, np.zeros_like(t), np.zeros_like(t)
    x = np.clip((t - a) / width, 0.0, 1.0)
    s = x**3 * (10.0 - 15.0 * x + 6.0 * x**2)
    s1 = 30.0 * x**2 * (1.0 - x) ** 2 / width
    s2 = 60.0 * x * (1.0 - 3.0 * x + 2.0 * x**2) / width**2
    return s, s1, s2


def _sin_channel(t, amp: float, freq_hz: float, phase: float, ramp):
    """amp * s(t) * sin(2 pi f t + phase) with exact derivatives."""
    s, s1, s2 = ramp
    w = 2.0 * math.pi * freq_hz
    arg = w * t + phase
    sn, cs = np.sin(arg), np.cos(arg)
    v = amp * s * sn
    d1 = amp * (s1 * sn + s * w * cs)
    d2 = amp * (s2 * sn + 2.0 * s1 * w * cs - s * w * w * sn)
    return v, d1, d2


def _linear_channel(t, rate: float, ramp):
    """rate * integral of s — approximated as rate * s * t for ramped starts."""
    s, s1, s2 = ramp
    v = rate * s * t
    d1 = rate * (s1 * t + s)
    d2 = rate * (s2 * t + 2.0 * s1)
    return v, d1, d2


def _zero(t):
    z = np.zeros_like(np.asarray(t, dtype=float))
    return z, z.copy(), z.copy()


def _motion_terms(spec: TrajectorySpec, t):
    """Euler angles, their derivatives, and world position/acceleration."""
    t = np.asarray(t, dtype=float)
    if spec.kind == "straight":
        zero = _zero(t)
        roll = pitch = yaw = zero
        p = np.zeros(t.shape + (3,))
        p[..., 0] = spec.speed * t
        a_w = np.zeros(t.shape + (3,))
        return roll, pitch, yaw, p, a_w

    if spec.kind == "rest_then_drive":
        ramp = _smoothstep(t, spec.rest_duration_s, spec.ramp_s)
    else:
        ramp = _smoothstep(t, 0.0, 0.0)

    if spec.kind == "slow_turn":
        yaw_rate = 0.3 * spec.turn_rate
        yaw = _linear_channel(t, yaw_rate, ramp)
        roll = _sin_channel(t, 0.1 * spec.tilt_excitation, spec.tilt_freq_hz, 0.0, ramp)
        pitch = _sin_channel(t, 0.1 * spec.tilt_excitation, spec.tilt_freq_hz, 0.5 * math.pi, ramp)
        radius = spec.speed / max(yaw_rate, 1e-6)
        px = _sin_channel(t, radius, yaw_rate / (2.0 * math.pi), 0.0, ramp)
        py = _sin_channel(t, -radius, yaw_rate / (2.0 * math.pi), 0.5 * math.pi, ramp)
    else:  # figure8 and the driving part of rest_then_drive
        yaw_amp = spec.turn_rate / (2.0 * math.pi * spec.lobe_freq_hz)
        yaw = _sin_channel(t, yaw_amp, spec.lobe_freq_hz, 0.0, ramp)
        roll = _sin_channel(t, spec.tilt_excitation, spec.tilt_freq_hz, 0.0, ramp)
        pitch = _sin_channel(t, spec.tilt_excitation, spec.tilt_freq_hz, 0.5 * math.pi, ramp)
        amp_x = spec.speed / (2.0 * math.pi * spec.lobe_freq_hz)
        px = _sin_channel(t, amp_x, spec.lobe_freq_hz, 0.0, ramp)
        py = _sin_channel(t, 0.5 * amp_x, 2.0 * spec.lobe_freq_hz, 0.0, ramp)

    p = np.stack([px[0], py[0], np.zeros_like(t)], axis=-1)
    a_w = np.stack([px[2], py[2], np.zeros_like(t)], axis=-1)
    return roll, pitch, yaw, p, a_w


def _rotation_zyx_many(roll, pitch, yaw) -> np.ndarray:
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    r = np.empty(np.shape(roll) + (3, 3))
    r[..., 0, 0] = cy * cp
    r[..., 0, 1] = cy * sp * sr - sy * cr
    r[..., 0, 2] = cy * sp * cr + sy * sr
    r[..., 1, 0] = sy * cp
    r[..., 1, 1] = sy * sp * sr + cy * cr
    r[..., 1, 2] = sy * sp * cr - cy * sr
    r[..., 2, 0] = -sp
    r[..., 2, 1] = cp * sr
    r[..., 2, 2] = cp * cr
    return r


@dataclass
class Trajectory:
    """Sampled rigid-body motion with a continuous closed-form evaluator."""

    spec: TrajectorySpec
    t_ns: np.ndarray
    r_wb: np.ndarray  # (N, 3, 3) body -> world
    p_w: np.ndarray  # (N, 3) [m]
    omega_b: np.ndarray  # (N, 3) body rate [rad/s]
    alpha_b: np.ndarray  # (N, 3) body angular acceleration [rad/s^2]
    accel_b: np.ndarray  # (N, 3) gravity-free body acceleration [m/s^2]

    @property
    def time_s(self) -> np.ndarray:
        return self.t_ns * 1e-9

    def evaluate(self, t):
        """Exact trajectory state at arbitrary times (scalar or array)."""
        return _evaluate(self.spec, t)


def _evaluate(spec: TrajectorySpec, t):
    (roll, d_roll, dd_roll) = (None, None, None)
    roll_c, pitch_c, yaw_c, p, a_w = _motion_terms(spec, t)
    roll, d_roll, dd_roll = roll_c
    pitch, d_pitch, dd_pitch = pitch_c
    yaw, d_yaw, dd_yaw = yaw_c

    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)

    # body rates from ZYX Euler angle rates
    wx = d_roll - d_yaw * sp
    wy = d_pitch * cr + d_yaw * cp * sr
    wz = -d_pitch * sr + d_yaw * cp * cr
    omega = np.stack([wx, wy, wz], axis=-1)

    ax = dd_roll - dd_yaw * sp - d_yaw * d_pitch * cp
    ay = (
        dd_pitch * cr
        - d_pitch * d_roll * sr
        + dd_yaw * cp * sr
        + d_yaw * (d_roll * cp * cr - d_pitch * sp * sr)
    )
    az = (
        -dd_pitch * sr
        - d_pitch * d_roll * cr
        + dd_yaw * cp * cr
        - d_yaw * (d_roll * cp * sr + d_pitch * sp * cr)
    )
    alpha = np.stack([ax, ay, az], axis=-1)

    r = _rotation_zyx_many(roll, pitch, yaw)
    accel_b = np.einsum("...ji,...j->...i", r, a_w)
    return r, p, omega, alpha, accel_b


def gen_trajectory(spec: TrajectorySpec, seed: int = 0) -> Trajectory:
    """Sample a trajectory on its nominal time grid.

    The seed is accepted for interface symmetry; trajectories themselves are
    deterministic closed forms.
    """
    n = int(round(spec.duration_s * spec.rate_hz))
    t = np.arange(n) / spec.rate_hz
    r, p, omega, alpha, accel_b = _evaluate(spec, t)
    t_ns = np.round(t * 1e9).astype(np.int64)
    return Trajectory(spec, t_ns, r, p, omega, alpha, accel_b)


# ---------------------------------------------------------------------------
# sensor synthesis
# ---------------------------------------------------------------------------


@dataclass
class SensorMountSpec:
    """Ground-truth mounting and error model of one simulated IMU."""

    transform: RigidTransform  # pose of the sensor in the base frame
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma_omega: float = 0.0  # gyro noise std per axis [rad/s]
    sigma_accel: float = 0.0  # accel noise std per axis [m/s^2]
    rate_hz: float | None = None  # defaults to the trajectory rate

    def __post_init__(self):
        self.gyro_bias = check_vector3(self.gyro_bias, "gyro_bias")
        self.accel_bias = check_vector3(self.accel_bias, "accel_bias")
        if self.sigma_omega < 0 or self.sigma_accel < 0:
            raise ValueError("noise sigmas must be non-negative")


def synth_imu(
    traj: Trajectory,
    mount: SensorMountSpec,
    seed: int = 0,
    include_gravity: bool = True,
) -> ImuSeries:
    """Forward-model the IMU readings of a sensor mounted off the base.

    The angular rate is the body rate expressed in the sensor frame; the
    accelerometer picks up the base acceleration plus the centrifugal and
    angular-acceleration lever-arm terms, the gravity reaction, bias, and
    white noise. Give each sensor its own seed.
    """
    if mount.rate_hz is None or mount.rate_hz == traj.spec.rate_hz:
        t_s = traj.time_s
        t_ns = traj.t_ns.copy()
        r_wb, _, omega_b, alpha_b, accel_b = (
            traj.r_wb,
            traj.p_w,
            traj.omega_b,
            traj.alpha_b,
            traj.accel_b,
        )
        rate = traj.spec.rate_hz
    else:
        rate = mount.rate_hz
        n = int(round(traj.spec.duration_s * rate))
        t_s = np.arange(n) / rate
        r_wb, _, omega_b, alpha_b, accel_b = traj.evaluate(t_s)
        t_ns = np.round(t_s * 1e9).astype(np.int64)

    r_m = mount.transform.rotation  # sensor -> base
    lever = mount.transform.translation
    omega_s = omega_b @ r_m  # == r_m.T @ omega per sample
    lever_acc = np.cross(omega_b, np.cross(omega_b, lever)) + np.cross(alpha_b, lever)
    accel_s = (accel_b + lever_acc) @ r_m

    if include_gravity:
        g_b = np.einsum("nij,i->nj", r_wb, GRAVITY_W)  # R_WB^T g_W per sample
        accel_s = accel_s - g_b @ r_m

    rng = make_rng(seed)
    omega_meas = omega_s + mount.gyro_bias
    accel_meas = accel_s + mount.accel_bias
    if mount.sigma_omega > 0:
        omega_meas = omega_meas + mount.sigma_omega * rng.standard_normal(omega_s.shape)
    if mount.sigma_accel > 0:
        accel_meas = accel_meas + mount.sigma_accel * rng.standard_normal(accel_s.shape)

    return ImuSeries(mount.transform.from_frame, rate, t_ns, omega_meas, accel_meas)


# ---------------------------------------------------------------------------
# scene synthesis
# ---------------------------------------------------------------------------


@dataclass
class LinePrimitive:
    point: np.ndarray
    direction: np.ndarray
    length: float

    def __post_init__(self):
        self.point = check_vector3(self.point, "point")
        d = check_vector3(self.direction, "direction")
        self.direction = d / np.linalg.norm(d)
        if self.length <= 0:
            raise ValueError("length must be positive")


@dataclass
class PlanePrimitive:
    point: np.ndarray
    normal: np.ndarray
    extent: tuple[float, float]

    def __post_init__(self):
        self.point = check_vector3(self.point, "point")
        n = check_vector3(self.normal, "normal")
        self.normal = n / np.linalg.norm(n)
        if min(self.extent) <= 0:
            raise ValueError("extent must be positive")

    def basis(self) -> tuple[np.ndarray, np.ndarray]:
        helper = np.array([1.0, 0.0, 0.0])
        if abs(self.normal @ helper) > 0.9:
            helper = np.array([0.0, 1.0, 0.0])
        e1 = np.cross(self.normal, helper)
        e1 /= np.linalg.norm(e1)
        return e1, np.cross(self.normal, e1)


@dataclass
class SceneSpec:
    """Ideal structured scene sampled into per-sensor point clouds."""

    planes: list[PlanePrimitive] = field(default_factory=list)
    lines: list[LinePrimitive] = field(default_factory=list)
    plane_density: float = 20.0  # [pts/m^2]
    line_density: float = 80.0  # [pts/m]
    noise_sigma: float = 0.005  # [m]

    def __post_init__(self):
        if self.plane_density <= 0 or self.line_density <= 0:
            raise ValueError("densities must be positive")


def synth_scene(scene: SceneSpec, sensor_pose: RigidTransform, seed: int = 0) -> PointCloud:
    """Sample the scene primitives and express them in the sensor frame.

    ``sensor_pose`` is the pose of the sensor in the scene (world) frame;
    output coordinates are sensor-frame. Deterministic under the seed.
    """
    rng = make_rng(seed)
    chunks = []
    for plane in scene.planes:
        n_pts = max(1, int(round(scene.plane_density * plane.extent[0] * plane.extent[1])))
        e1, e2 = plane.basis()
        u = rng.uniform(-0.5 * plane.extent[0], 0.5 * plane.extent[0], n_pts)
        v = rng.uniform(-0.5 * plane.extent[1], 0.5 * plane.extent[1], n_pts)
        chunks.append(plane.point + u[:, None] * e1 + v[:, None] * e2)
    for line in scene.lines:
        n_pts = max(1, int(round(scene.line_density * line.length)))
        s = rng.uniform(-0.5 * line.length, 0.5 * line.length, n_pts)
        chunks.append(line.point + s[:, None] * line.direction)
    if not chunks:
        raise ValueError("scene has no primitives")
    pts_world = np.vstack(chunks)
    if scene.noise_sigma > 0:
        pts_world = pts_world + scene.noise_sigma * rng.standard_normal(pts_world.shape)
    pts_sensor = sensor_pose.inverse().apply(pts_world)
    return PointCloud(frame=sensor_pose.from_frame, points=pts_sensor)


def default_scene(noise_sigma: float = 0.005) -> SceneSpec:
    """Structured test scene: ground, two walls, and a few non-parallel beams."""
    planes = [
        PlanePrimitive(np.array([12.0, 0.0, -2.0]), np.array([0.0, 0.0, 1.0]), (24.0, 14.0)),
        PlanePrimitive(np.array([25.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]), (14.0, 5.0)),
        PlanePrimitive(np.array([12.0, 8.0, 1.0]), np.array([0.0, 1.0, 0.0]), (22.0, 5.0)),
    ]
    lines = [
        LinePrimitive(np.array([8.0, -5.0, 0.5]), np.array([0.0, 0.0, 1.0]), 5.0),
        LinePrimitive(np.array([15.0, 4.0, 0.5]), np.array([0.0, 0.0, 1.0]), 5.0),
        LinePrimitive(np.array([12.0, -2.0, 1.0]), np.array([1.0, 0.3, 0.8]), 5.0),
        LinePrimitive(np.array([10.0, 5.0, 2.5]), np.array([1.0, 0.0, 0.0]), 6.0),
    ]
    return SceneSpec(planes=planes, lines=lines, noise_sigma=noise_sigma)
