import math

import numpy as np
import pytest

from rigidcal.geometry import (
    RigidTransform,
    quat_angle,
    quat_from_matrix,
    quat_multiply,
    quat_normalize,
    rot_z,
)
from rigidcal.imu import GRAVITY_W, STANDARD_GRAVITY, ImuConditioner, OrientationState, detect_rest
from rigidcal.sim import (
    LinePrimitive,
    PlanePrimitive,
    SceneSpec,
    SensorMountSpec,
    Trajectory,
    TrajectorySpec,
    default_scene,
    gen_trajectory,
    synth_imu,
    synth_scene,
)

G = STANDARD_GRAVITY
IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


def quat_derivative(q, omega):
    """q_dot = 0.5 * q (x) [0, omega] without normalization."""
    w, x, y, z = q
    ox, oy, oz = omega
    return 0.5 * np.array(
        [
            -x * ox - y * oy - z * oz,
            w * ox + y * oz - z * oy,
            w * oy - x * oz + z * ox,
            w * oz + x * oy - y * ox,
        ]
    )


class TestTrajectories:
    def test_straight_is_quiescent(self):
        traj = gen_trajectory(TrajectorySpec("straight", duration_s=10.0))
        assert np.abs(traj.omega_b).max() == 0.0
        assert np.abs(traj.accel_b).max() == 0.0
        assert np.abs(traj.alpha_b).max() == 0.0
        # constant velocity along x
        v = np.diff(traj.p_w[:, 0]) / np.diff(traj.time_s)
        assert np.allclose(v, traj.spec.speed, atol=1e-9)

    def test_figure8_yaw_rate_alternates(self):
        traj = gen_trajectory(TrajectorySpec("figure8", duration_s=30.0))
        wz = traj.omega_b[:, 2]
        assert wz.max() > 0.3 and wz.min() < -0.3
        sign_changes = np.sum(np.abs(np.diff(np.sign(wz))) > 1)
        assert sign_changes >= 2

    def test_figure8_rotation_consistent_with_rates(self):
        # RK4-integrate q_dot = q (x) omega/2 using the exact continuous rates
        spec = TrajectorySpec("figure8", duration_s=30.0, rate_hz=100.0)
        traj = gen_trajectory(spec)
        dt = 0.01
        q = quat_from_matrix(traj.r_wb[0])
        worst = 0.0
        for k in range(len(traj.t_ns) - 1):
            t = traj.time_s[k]
            _, _, w1, _, _ = traj.evaluate(t)
            _, _, w2, _, _ = traj.evaluate(t + 0.5 * dt)
            _, _, w3, _, _ = traj.evaluate(t + dt)
            k1 = quat_derivative(q, w1)
            k2 = quat_derivative(q + 0.5 * dt * k1, w2)
            k3 = quat_derivative(q + 0.5 * dt * k2, w2)
            k4 = quat_derivative(q + dt * k3, w3)
            q = q + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            q = q / np.linalg.norm(q)
            if (k + 1) % 100 == 0:
                q_ref = quat_from_matrix(traj.r_wb[k + 1])
                worst = max(worst, quat_angle(quat_normalize(q), q_ref))
        assert worst < 1e-6

    def test_rest_then_drive_starts_at_rest(self):
        spec = TrajectorySpec("rest_then_drive", duration_s=30.0, rest_duration_s=5.0)
        traj = gen_trajectory(spec)
        mount = SensorMountSpec(RigidTransform.identity("I", "B"))
        series = synth_imu(traj, mount, seed=0)
        lead = series.window(0, int(5.0 * spec.rate_hz))
        state = OrientationState(q_bi=IDENTITY_Q)
        assert detect_rest(lead, state, tau=0.15) is True
        # and the driving part moves
        late = traj.omega_b[int(15 * spec.rate_hz) :]
        assert np.linalg.norm(late, axis=1).max() > 0.3

    def test_slow_turn_has_gentle_rates(self):
        traj = gen_trajectory(TrajectorySpec("slow_turn", duration_s=20.0))
        mags = np.linalg.norm(traj.omega_b, axis=1)
        assert 0.05 < mags.max() < 0.5

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            TrajectorySpec("wiggle")
        with pytest.raises(ValueError):
            TrajectorySpec("figure8", duration_s=-1.0)
        with pytest.raises(ValueError):
            TrajectorySpec("figure8", rate_hz=10.0)


class TestSynthImu:
    def test_identity_mount_at_rest(self):
        spec = TrajectorySpec("rest_then_drive", duration_s=8.0, rest_duration_s=8.0)
        traj = gen_trajectory(spec)
        mount = SensorMountSpec(RigidTransform.identity("I", "B"))
        series = synth_imu(traj, mount, seed=0)
        assert np.abs(series.omega).max() < 1e-15
        assert np.abs(series.accel - [0, 0, G]).max() < 1e-12

    def test_centripetal_term(self):
        n = 200
        spec = TrajectorySpec("straight", duration_s=2.0)
        t_ns = np.round(np.arange(n) / 100.0 * 1e9).astype(np.int64)
        traj = Trajectory(
            spec=spec,
            t_ns=t_ns,
            r_wb=np.tile(np.eye(3), (n, 1, 1)),
            p_w=np.zeros((n, 3)),
            omega_b=np.tile([0.0, 0.0, 1.0], (n, 1)),
            alpha_b=np.zeros((n, 3)),
            accel_b=np.zeros((n, 3)),
        )
        base = synth_imu(traj, SensorMountSpec(RigidTransform.identity("B", "B")), include_gravity=False)
        off = SensorMountSpec(
            RigidTransform(np.eye(3), np.array([1.0, 0.0, 0.0]), "I", "B")
        )
        sensor = synth_imu(traj, off, include_gravity=False)
        diff = sensor.accel - base.accel
        assert np.abs(diff - [-1.0, 0.0, 0.0]).max() < 1e-12

    def test_zero_noise_identity_mount_reproduces_trajectory(self):
        spec = TrajectorySpec("figure8", duration_s=10.0)
        traj = gen_trajectory(spec)
        series = synth_imu(traj, SensorMountSpec(RigidTransform.identity("B", "B")), seed=3)
        assert np.abs(series.omega - traj.omega_b).max() < 1e-12
        g_term = np.einsum("nij,i->nj", traj.r_wb, GRAVITY_W)
        assert np.abs(series.accel - (traj.accel_b - g_term)).max() < 1e-12

    def test_gravity_norm_at_rest(self):
        spec = TrajectorySpec("rest_then_drive", duration_s=6.0, rest_duration_s=6.0)
        traj = gen_trajectory(spec)
        mount = SensorMountSpec(
            RigidTransform(rot_z(0.4), np.array([0.5, -0.2, 0.1]), "I", "B"),
            accel_bias=np.array([0.01, 0.02, -0.01]),
        )
        series = synth_imu(traj, mount, seed=1)
        norms = np.linalg.norm(series.accel - mount.accel_bias, axis=1)
        assert np.abs(norms - G).max() < 1e-9

    def test_rotated_mount_rotates_rates(self):
        spec = TrajectorySpec("figure8", duration_s=10.0)
        traj = gen_trajectory(spec)
        r = rot_z(math.radians(45.0))
        mount = SensorMountSpec(RigidTransform(r, np.zeros(3), "I", "B"))
        series = synth_imu(traj, mount, seed=2)
        assert np.abs(series.omega - traj.omega_b @ r).max() < 1e-12

    def test_seed_determinism(self):
        spec = TrajectorySpec("figure8", duration_s=5.0)
        traj = gen_trajectory(spec)
        mount = SensorMountSpec(
            RigidTransform.identity("I", "B"), sigma_omega=0.01, sigma_accel=0.05
        )
        s1 = synth_imu(traj, mount, seed=11)
        s2 = synth_imu(traj, mount, seed=11)
        s3 = synth_imu(traj, mount, seed=12)
        assert np.array_equal(s1.omega, s2.omega)
        assert np.array_equal(s1.accel, s2.accel)
        assert not np.array_equal(s1.omega, s3.omega)

    def test_resampled_rate(self):
        spec = TrajectorySpec("figure8", duration_s=5.0, rate_hz=100.0)
        traj = gen_trajectory(spec)
        mount = SensorMountSpec(RigidTransform.identity("I", "B"), rate_hz=200.0)
        series = synth_imu(traj, mount, seed=0)
        assert len(series) == 1000
        assert abs(series.rate_hz - 200.0) < 1e-12


class TestSynthScene:
    def test_single_plane_exact_without_noise(self):
        scene = SceneSpec(
            planes=[PlanePrimitive(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, 1.0]), (4.0, 4.0))],
            noise_sigma=0.0,
        )
        cloud = synth_scene(scene, RigidTransform.identity("L", "W"), seed=0)
        assert np.abs(cloud.points[:, 2] - 1.0).max() < 1e-12

    def test_pose_moves_points(self):
        scene = default_scene(noise_sigma=0.0)
        pose = RigidTransform(rot_z(0.3), np.array([1.0, 2.0, 0.5]), "L", "W")
        c_world = synth_scene(scene, RigidTransform.identity("L", "W"), seed=4)
        c_sensor = synth_scene(scene, pose, seed=4)
        assert np.abs(pose.apply(c_sensor.points) - c_world.points).max() < 1e-9

    def test_seeded_determinism(self):
        scene = default_scene()
        pose = RigidTransform.identity("L", "W")
        c1 = synth_scene(scene, pose, seed=9)
        c2 = synth_scene(scene, pose, seed=9)
        assert np.array_equal(c1.points, c2.points)

    def test_line_sampling(self):
        scene = SceneSpec(
            lines=[LinePrimitive(np.array([0.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]), 4.0)],
            noise_sigma=0.0,
        )
        cloud = synth_scene(scene, RigidTransform.identity("L", "W"), seed=0)
        assert np.abs(cloud.points[:, :2]).max() < 1e-12
        assert np.abs(cloud.points[:, 2]).max() <= 2.0


class TestConditionerOnOracle:
    def test_rest_then_drive_conditioning(self):
        spec = TrajectorySpec("rest_then_drive", duration_s=30.0, rest_duration_s=5.0)
        traj = gen_trajectory(spec)
        mount = SensorMountSpec(
            RigidTransform.identity("I", "B"),
            gyro_bias=np.array([0.01, 0.01, 0.01]),
            sigma_omega=3e-4,
            sigma_accel=0.01,
        )
        series = synth_imu(traj, mount, seed=21)
        res = ImuConditioner().run(series)
        assert res.init_mode == "rest"
        assert len(res.rest_windows) >= 1
        w = res.rest_windows[0]
        assert np.linalg.norm(w.gyro_bias - mount.gyro_bias) < 0.1 * np.linalg.norm(mount.gyro_bias)
