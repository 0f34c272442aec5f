import math

import numpy as np
import pytest

from rigidcal.errors import (
    DegenerateInput,
    IllConditioned,
    InsufficientExcitation,
    NoOverlap,
)
from rigidcal.geometry import RigidTransform, geodesic_angle, rot_z, rotvec_to_matrix
from rigidcal.imu import ImuConditioner, ImuSeries
from rigidcal.sim import SensorMountSpec, TrajectorySpec, gen_trajectory, synth_imu
from rigidcal.signal_calib import (
    SignalCalibConfig,
    TranslationBounds,
    angular_accel,
    bvls_solve,
    calibrate_imu_pair,
    estimate_rotation,
    estimate_translation,
    lever_arm_system,
    resample_align,
    rotation_residual_rms,
)


def make_series(omega, accel, rate=100.0, frame="I", t0=0):
    n = len(omega)
    t = t0 + np.round(np.arange(n) / rate * 1e9).astype(np.int64)
    return ImuSeries(frame, rate, t, omega, accel)


class TestResampleAlign:
    def test_identical_series(self):
        rng = np.random.Generator(np.random.Philox(51))
        omega = rng.standard_normal((500, 3))
        accel = rng.standard_normal((500, 3))
        s = make_series(omega, accel)
        ps = resample_align(s, s, 100.0)
        assert np.abs(ps.omega_b - ps.omega_i).max() == 0.0
        assert np.abs(ps.accel_b - ps.accel_i).max() == 0.0

    def test_shifted_series_interpolates(self):
        # both streams sample the same 1 Hz signal; b's clock is offset by
        # half a sample period, so its values need interpolation onto the
        # grid. Linear interpolation error bound: (2 pi)^2 h^2 / 8 < 1e-3.
        rate = 100.0
        n = 600
        shift = 0.5 / rate

        def signal(ts):
            return np.column_stack([np.zeros_like(ts), np.zeros_like(ts), np.sin(2 * np.pi * ts)])

        t_a = np.arange(n) / rate
        t_b = t_a + shift
        a = make_series(signal(t_a), np.zeros((n, 3)))
        b = ImuSeries("I2", rate, np.round(t_b * 1e9).astype(np.int64), signal(t_b), np.zeros((n, 3)))
        ps = resample_align(a, b, rate)
        assert np.abs(ps.omega_i - ps.omega_b).max() < 1e-3

    def test_disjoint_spans(self):
        a = make_series(np.zeros((300, 3)), np.zeros((300, 3)))
        b = make_series(np.zeros((300, 3)), np.zeros((300, 3)), t0=10_000_000_000)
        with pytest.raises(NoOverlap):
            resample_align(a, b, 100.0)


class TestAngularAccel:
    def test_constant_rate_zero_derivative(self):
        omega = np.tile([0.1, -0.2, 0.3], (100, 1))
        alpha = angular_accel(omega, 0.01)
        assert np.abs(alpha).max() < 1e-12

    def test_sinusoid_derivative(self):
        # smoothing (window 5) plus central differences attenuate a 1 Hz
        # sinusoid at 100 Hz by ~0.5%, so the achievable absolute accuracy
        # on a 2*pi-amplitude derivative is ~3e-2
        t = np.arange(500) / 100.0
        omega = np.column_stack([np.zeros(500), np.zeros(500), np.sin(2 * np.pi * t)])
        alpha = angular_accel(omega, 0.01)
        expected = 2 * np.pi * np.cos(2 * np.pi * t)
        assert np.abs(alpha[10:-10, 2] - expected[10:-10]).max() < 0.035

    def test_linear_ramp_exact_interior(self):
        t = np.arange(200) / 100.0
        omega = np.column_stack([np.zeros(200), np.zeros(200), t])
        alpha = angular_accel(omega, 0.01)
        assert np.abs(alpha[5:-5, 2] - 1.0).max() < 1e-10

    def test_needs_three_samples(self):
        with pytest.raises(ValueError):
            angular_accel(np.zeros((2, 3)), 0.01)


class TestEstimateRotation:
    def test_exact_recovery(self):
        rng = np.random.Generator(np.random.Philox(52))
        r0 = rot_z(math.radians(30.0)) @ rotvec_to_matrix([0.1, -0.05, 0.0])
        w_b = rng.standard_normal((300, 3))
        r = estimate_rotation(w_b, w_b @ r0.T)
        assert geodesic_angle(r, r0) < 1e-9
        assert rotation_residual_rms(r, w_b, w_b @ r0.T) < 1e-12

    def test_single_axis_degenerate(self):
        w = np.outer(np.sin(np.linspace(0, 6, 200)), [0, 0, 1.0])
        with pytest.raises(DegenerateInput):
            estimate_rotation(w, w)

    def test_local_optimality_probe(self):
        rng = np.random.Generator(np.random.Philox(53))
        r0 = rot_z(0.4)
        w_b = rng.standard_normal((500, 3))
        w_i = w_b @ r0.T + 0.01 * rng.standard_normal((500, 3))
        r = estimate_rotation(w_b, w_i)
        base = rotation_residual_rms(r, w_b, w_i)
        for _ in range(100):
            axis = rng.standard_normal(3)
            axis /= np.linalg.norm(axis)
            perturbed = rotvec_to_matrix(axis * math.radians(1.0)) @ r
            assert rotation_residual_rms(perturbed, w_b, w_i) >= base


class TestBvls:
    def test_interior_matches_unweighted_lstsq(self):
        rng = np.random.Generator(np.random.Philox(54))
        a = rng.standard_normal((40, 3))
        x_true = np.array([0.1, -0.2, 0.05])
        b = a @ x_true
        x = bvls_solve(a, b, None, (np.full(3, -1.0), np.full(3, 1.0)), np.zeros(3))
        ref = np.linalg.lstsq(a, b, rcond=None)[0]
        assert np.abs(x - ref).max() < 1e-10

    def test_scalar_problem_active_bound(self):
        a = np.ones((1, 1))
        b = np.array([2.0])
        x = bvls_solve(a, b, None, (np.array([-np.inf]), np.array([1.0])), np.array([0.0]))
        assert abs(x[0] - 1.0) < 1e-12

    def test_bounds_is_hard_clip(self):
        rng = np.random.Generator(np.random.Philox(55))
        for _ in range(20):
            a = rng.standard_normal((30, 3))
            b = rng.standard_normal(30)
            lo = rng.uniform(-0.5, 0.0, 3)
            hi = lo + rng.uniform(0.01, 0.3, 3)
            x0 = 0.5 * (lo + hi)
            x = bvls_solve(a, b, None, (lo, hi), x0)
            assert np.all(x >= lo) and np.all(x <= hi)

    def test_beats_random_feasible_points(self):
        rng = np.random.Generator(np.random.Philox(56))
        for _ in range(10):
            u, _ = np.linalg.qr(rng.standard_normal((20, 3)))
            a = u @ np.diag([1.0, 0.5, 0.05]) @ np.linalg.qr(rng.standard_normal((3, 3)))[0]
            b = rng.standard_normal(20)
            lo = rng.uniform(-0.4, -0.05, 3)
            hi = rng.uniform(0.05, 0.4, 3)
            x0 = np.clip(np.zeros(3), lo, hi)
            x = bvls_solve(a, b, None, (lo, hi), x0)
            obj = np.sum((a @ x - b) ** 2)
            samples = rng.uniform(lo, hi, size=(10_000, 3))
            objs = np.sum((samples @ a.T - b) ** 2, axis=1)
            assert obj <= objs.min() + 1e-10

    def test_weight_scale_invariance(self):
        rng = np.random.Generator(np.random.Philox(57))
        a = rng.standard_normal((25, 3))
        b = rng.standard_normal(25)
        bounds = (np.full(3, -0.1), np.full(3, 0.1))
        x1 = bvls_solve(a, b, 1.0, bounds, np.zeros(3))
        x2 = bvls_solve(a, b, 2.0, bounds, np.zeros(3))
        assert np.abs(x1 - x2).max() < 1e-12

    def test_zero_matrix_ill_conditioned(self):
        a = np.zeros((10, 3))
        with pytest.raises(IllConditioned):
            bvls_solve(a, np.zeros(10), None, (np.full(3, -1.0), np.full(3, 1.0)), np.zeros(3))

    def test_x0_outside_bounds_rejected(self):
        with pytest.raises(ValueError):
            bvls_solve(np.eye(3), np.zeros(3), None, (np.zeros(3), np.ones(3)), np.full(3, 2.0))


class TestEstimateTranslation:
    @staticmethod
    def _forward(omega, alpha, t_true, r_star=np.eye(3), accel_b=None):
        n = len(omega)
        accel_b = np.zeros((n, 3)) if accel_b is None else accel_b
        a_blocks, _ = lever_arm_system(omega, alpha, np.zeros((n, 3)), np.zeros((n, 3)), np.eye(3))
        lever = np.einsum("nij,j->ni", a_blocks, t_true)
        accel_i = (accel_b + lever) @ r_star.T  # rows: R* (a_B + lever)
        return accel_b, accel_i

    def test_no_motion_ill_conditioned(self):
        n = 200
        z = np.zeros((n, 3))
        bounds = TranslationBounds.around(np.zeros(3), 0.5)
        with pytest.raises(IllConditioned):
            estimate_translation(z, z, z, z, np.eye(3), bounds, np.zeros(3))

    def test_constant_spin_recovers_observable_axes(self):
        n = 500
        omega = np.tile([0.0, 0.0, 1.0], (n, 1))
        alpha = np.zeros((n, 3))
        t_true = np.array([1.0, 0.0, 0.3])
        accel_b, accel_i = self._forward(omega, alpha, t_true)
        bounds = TranslationBounds(np.array([-2.0, -2.0, -2.0]), np.array([2.0, 2.0, 2.0]))
        t_init = np.array([0.5, 0.2, 0.1])
        t, diag = estimate_translation(omega, alpha, accel_b, accel_i, np.eye(3), bounds, t_init)
        assert diag["observable_rank"] == 2
        assert abs(t[0] - 1.0) < 1e-9  # observable
        assert abs(t[1] - 0.0) < 1e-9  # observable
        assert abs(t[2] - t_init[2]) < 1e-12  # pinned at the initial guess

    def test_full_excitation_exact(self):
        rate = 100.0
        n = 2000
        t_s = np.arange(n) / rate
        omega = np.column_stack(
            [
                0.3 * np.sin(2 * np.pi * 0.4 * t_s),
                0.3 * np.cos(2 * np.pi * 0.3 * t_s),
                0.8 * np.sin(2 * np.pi * 0.15 * t_s),
            ]
        )
        alpha = np.column_stack(
            [
                0.3 * 2 * np.pi * 0.4 * np.cos(2 * np.pi * 0.4 * t_s),
                -0.3 * 2 * np.pi * 0.3 * np.sin(2 * np.pi * 0.3 * t_s),
                0.8 * 2 * np.pi * 0.15 * np.cos(2 * np.pi * 0.15 * t_s),
            ]
        )
        r_star = rot_z(0.7)
        t_true = np.array([0.4, -0.2, 0.15])
        accel_b, accel_i = self._forward(omega, alpha, t_true, r_star)
        bounds = TranslationBounds.around(t_true, 0.5)
        t, diag = estimate_translation(
            omega, alpha, accel_b, accel_i, r_star, bounds, t_true + 0.05
        )
        assert diag["observable_rank"] == 3
        assert np.abs(t - t_true).max() < 1e-6

    def test_common_acceleration_invariance(self):
        rng = np.random.Generator(np.random.Philox(58))
        n = 800
        t_s = np.arange(n) / 100.0
        omega = np.column_stack(
            [
                0.2 * np.sin(2 * np.pi * 0.5 * t_s),
                0.2 * np.cos(2 * np.pi * 0.4 * t_s),
                0.6 * np.sin(2 * np.pi * 0.2 * t_s),
            ]
        )
        alpha = angular_accel(omega, 0.01)
        r_star = rot_z(0.3)
        t_true = np.array([0.2, 0.1, -0.05])
        accel_b, accel_i = self._forward(omega, alpha, t_true, r_star)
        bounds = TranslationBounds.around(t_true, 0.4)
        t1, _ = estimate_translation(omega, alpha, accel_b, accel_i, r_star, bounds, t_true + 0.02)
        c = np.array([0.37, -0.81, 0.22])
        t2, _ = estimate_translation(
            omega, alpha, accel_b + c, accel_i + c @ r_star.T, r_star, bounds, t_true + 0.02
        )
        assert np.abs(t1 - t2).max() < 1e-12


def _simulate_pair(seed, duration=60.0, sigma_omega=0.005, sigma_accel=0.05, kind="figure8"):
    t_true = np.array([0.23, 0.075, 0.0])
    r_true = rot_z(math.radians(45.0))
    traj = gen_trajectory(TrajectorySpec(kind, duration_s=duration, rate_hz=100.0))
    m_base = SensorMountSpec(
        RigidTransform.identity("B", "B"), sigma_omega=sigma_omega, sigma_accel=sigma_accel
    )
    m_sens = SensorMountSpec(
        RigidTransform(r_true, t_true, "I", "B"), sigma_omega=sigma_omega, sigma_accel=sigma_accel
    )
    sa = synth_imu(traj, m_base, seed=1000 + seed)
    sb = synth_imu(traj, m_sens, seed=2000 + seed)
    return sa, sb, r_true, t_true


class TestCalibrateImuPair:
    def test_self_calibration_is_identity(self):
        sa, _, _, _ = _simulate_pair(0, duration=30.0, sigma_omega=0.0, sigma_accel=0.0)
        ca = ImuConditioner().run(sa)
        est = calibrate_imu_pair(ca.compensated, ca.compensated)
        assert geodesic_angle(est.transform.rotation, np.eye(3)) < 1e-9
        assert np.abs(est.transform.translation).max() < 1e-9
        assert est.rotation_residual_rms < 1e-12

    def test_recovers_45_degree_mount(self):
        sa, sb, r_true, t_true = _simulate_pair(3, duration=40.0)
        ca = ImuConditioner().run(sa)
        cb = ImuConditioner().run(sb)
        t_init = t_true + np.array([0.05, -0.05, 0.04])
        est = calibrate_imu_pair(
            ca.compensated,
            cb.compensated,
            TranslationBounds.around(t_init, 0.3),
            t_init,
            translation_series=(ca.specific_force, cb.specific_force),
        )
        assert math.degrees(geodesic_angle(est.transform.rotation, r_true)) < 0.5
        assert np.abs(est.transform.translation - t_true).max() < 0.05
        assert est.n_samples_used > 1000

    def test_straight_drive_insufficient_excitation(self):
        sa, sb, _, _ = _simulate_pair(1, duration=30.0, sigma_omega=0.0, sigma_accel=0.0, kind="straight")
        with pytest.raises(InsufficientExcitation):
            calibrate_imu_pair(sa, sb)
