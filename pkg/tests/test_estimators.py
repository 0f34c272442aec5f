import math

import numpy as np
import pytest
from sklearn.base import clone

from rigidcal.errors import RigidCalError
from rigidcal.estimators import ImuExtrinsicCalibrator, PointCloudCalibrator
from rigidcal.geometry import RigidTransform, geodesic_angle, rot_z
from rigidcal.sim import (
    SensorMountSpec,
    TrajectorySpec,
    default_scene,
    gen_trajectory,
    synth_imu,
    synth_scene,
)

T_TRUE = np.array([0.23, 0.075, 0.0])
R_TRUE = rot_z(math.radians(45.0))


@pytest.fixture(scope="module")
def imu_pair():
    traj = gen_trajectory(TrajectorySpec("figure8", duration_s=30.0))
    base = synth_imu(
        traj,
        SensorMountSpec(RigidTransform.identity("B", "B"), sigma_omega=0.005, sigma_accel=0.05),
        seed=100,
    )
    sensor = synth_imu(
        traj,
        SensorMountSpec(RigidTransform(R_TRUE, T_TRUE, "L1", "B"), sigma_omega=0.005, sigma_accel=0.05),
        seed=200,
    )
    return base, sensor


class TestSklearnConventions:
    def test_get_set_params_round_trip(self):
        cal = ImuExtrinsicCalibrator(beta=0.02, bounds_margin=0.2)
        params = cal.get_params()
        assert params["beta"] == 0.02
        cal2 = ImuExtrinsicCalibrator().set_params(**params)
        assert cal2.get_params() == params

    def test_clone(self):
        cal = PointCloudCalibrator(voxel_size=0.1, n_line_pairs=42)
        cloned = clone(cal)
        assert cloned.get_params() == cal.get_params()

    def test_unfitted_transform_raises(self):
        with pytest.raises(RigidCalError):
            ImuExtrinsicCalibrator().transform(np.zeros((2, 3)))
        with pytest.raises(RigidCalError):
            PointCloudCalibrator().transform(np.zeros((2, 3)))


class TestImuExtrinsicCalibrator:
    def test_fit_recovers_mount(self, imu_pair):
        base, sensor = imu_pair
        cal = ImuExtrinsicCalibrator().fit(base, sensor, t_init=T_TRUE + [0.05, -0.04, 0.03])
        assert math.degrees(geodesic_angle(cal.extrinsics_.rotation, R_TRUE)) < 0.5
        assert np.abs(cal.extrinsics_.translation - T_TRUE).max() < 0.05
        assert cal.extrinsics_.from_frame == "L1"
        assert cal.extrinsics_.to_frame == "B"

    def test_transform_maps_points(self, imu_pair):
        base, sensor = imu_pair
        cal = ImuExtrinsicCalibrator().fit(base, sensor, t_init=T_TRUE)
        pts_sensor = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        mapped = cal.transform(pts_sensor)
        expected = pts_sensor @ R_TRUE.T + T_TRUE
        assert np.abs(mapped - expected).max() < 0.06

    def test_conditioning_summaries_exposed(self, imu_pair):
        base, sensor = imu_pair
        cal = ImuExtrinsicCalibrator().fit(base, sensor, t_init=T_TRUE)
        assert set(cal.conditioning_) == {"B", "L1"}
        assert cal.estimate_.n_samples_used > 0


class TestPointCloudCalibrator:
    def test_fit_refines_seed(self):
        scene = default_scene(noise_sigma=0.003)
        dst = synth_scene(scene, RigidTransform.identity("B", "W"), seed=300)
        src = synth_scene(scene, RigidTransform(R_TRUE, T_TRUE, "L1", "W"), seed=301)
        seed_pose = RigidTransform(
            rot_z(math.radians(45.5)), T_TRUE + [0.03, -0.02, 0.01], "L1", "B"
        )
        cal = PointCloudCalibrator().fit(src, dst, seed_pose)
        assert math.degrees(geodesic_angle(cal.extrinsics_.rotation, R_TRUE)) < 0.2
        assert np.abs(cal.extrinsics_.translation - T_TRUE).max() < 0.02
        assert cal.verified_ is True
        mapped = cal.transform(src.points[:5])
        expected = src.points[:5] @ R_TRUE.T + T_TRUE
        assert np.abs(mapped - expected).max() < 0.05
