import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rigidcal.cloud import (
    Feature,
    FeatureConfig,
    IcpConfig,
    MatchPair,
    PointCloud,
    box_filter,
    canonical_direction,
    compose_extrinsics,
    extract_features,
    icp_align,
    match_features,
    refine_extrinsics,
    verify_extrinsics,
    voxel_downsample,
)
from rigidcal.errors import DegenerateInput, FrameMismatch, NoPlanes, TooSparse
from rigidcal.geometry import (
    RigidTransform,
    geodesic_angle,
    rot_x,
    rot_z,
    rotvec_to_matrix,
)
from rigidcal.sim import (
    LinePrimitive,
    PlanePrimitive,
    SceneSpec,
    default_scene,
    synth_scene,
)

DEG = math.radians(1.0)


def structured_cloud(frame="B", pose=None, seed=0, noise=0.005):
    pose = pose or RigidTransform.identity(frame, "W")
    return synth_scene(default_scene(noise_sigma=noise), pose, seed=seed)


class TestBoxFilter:
    def test_default_bounds_keep_forward_sector(self):
        pts = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [60.0, 0.0, 0.0], [5.0, 5.0, -5.0]])
        out = box_filter(PointCloud("L", pts))
        assert len(out) == 2
        assert np.all(out.points[:, 0] >= 0.0)

    def test_full_range_is_identity(self):
        rng = np.random.Generator(np.random.Philox(61))
        pts = 100.0 * rng.standard_normal((200, 3))
        out = box_filter(PointCloud("L", pts), np.full(3, -1e12), np.full(3, 1e12))
        assert np.array_equal(out.points, pts)

    def test_empty_result_is_flagged_not_fatal(self, caplog):
        pts = np.tile([-5.0, 0.0, 0.0], (10, 1))
        with caplog.at_level("WARNING"):
            out = box_filter(PointCloud("L", pts))
        assert len(out) == 0
        assert any("no points" in r.message for r in caplog.records)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_idempotent(self, seed):
        rng = np.random.Generator(np.random.Philox(seed))
        pts = 20.0 * rng.standard_normal((100, 3))
        once = box_filter(PointCloud("L", pts))
        twice = box_filter(once)
        assert np.array_equal(once.points, twice.points)


class TestVoxelDownsample:
    def test_reduces_and_is_deterministic(self):
        rng = np.random.Generator(np.random.Philox(62))
        pts = rng.uniform(0, 2, (5000, 3))
        a = voxel_downsample(pts, 0.2)
        b = voxel_downsample(pts, 0.2)
        assert len(a) < len(pts)
        assert np.array_equal(a, b)


class TestIcp:
    def test_identity_on_same_cloud(self):
        cloud = structured_cloud()
        res = icp_align(cloud, cloud, RigidTransform.identity("B", "B"))
        assert geodesic_angle(res.transform.rotation, np.eye(3)) < 1e-9
        assert np.abs(res.transform.translation).max() < 1e-9
        assert res.rms < 1e-9

    def test_recovers_true_transform_from_seed(self):
        t_true = RigidTransform(
            rot_z(math.radians(4.0)) @ rot_x(math.radians(1.0)),
            np.array([0.15, -0.1, 0.05]),
            "L",
            "B",
        )
        scene = default_scene(noise_sigma=0.003)
        dst = synth_scene(scene, RigidTransform.identity("B", "W"), seed=10)
        src_pose = RigidTransform(t_true.rotation, t_true.translation, "L", "W")
        src = synth_scene(scene, src_pose, seed=11)
        seed_tf = RigidTransform.identity("L", "B")  # ~4 deg / 0.2 m off
        res = icp_align(src, dst, seed_tf)
        assert math.degrees(geodesic_angle(res.transform.rotation, t_true.rotation)) < 0.1
        assert np.abs(res.transform.translation - t_true.translation).max() < 0.01

    def test_too_sparse(self):
        small = PointCloud("L", np.random.default_rng(0).uniform(0, 1, (50, 3)))
        big = structured_cloud()
        with pytest.raises(TooSparse):
            icp_align(small, big, RigidTransform.identity("L", "B"))

    def test_frame_mismatch(self):
        cloud = structured_cloud()
        with pytest.raises(FrameMismatch):
            icp_align(cloud, cloud, RigidTransform.identity("L", "X"))

    def test_residual_history_non_increasing(self):
        t_true = RigidTransform(rot_z(0.05), np.array([0.2, 0.1, 0.0]), "L", "B")
        scene = default_scene(noise_sigma=0.005)
        dst = synth_scene(scene, RigidTransform.identity("B", "W"), seed=12)
        src = synth_scene(scene, RigidTransform(t_true.rotation, t_true.translation, "L", "W"), seed=13)
        res = icp_align(src, dst, RigidTransform.identity("L", "B"))
        hist = np.array(res.residual_history)
        assert np.all(np.diff(hist) <= 1e-12)


class TestExtractFeatures:
    def test_single_noisy_plane(self):
        scene = SceneSpec(
            planes=[PlanePrimitive(np.array([0.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]), (8.0, 8.0))],
            plane_density=50.0,
            noise_sigma=0.005,
        )
        cloud = synth_scene(scene, RigidTransform.identity("L", "W"), seed=20)
        lines, planes = extract_features(cloud, seed=0)
        assert len(planes) == 1
        angle = math.acos(min(1.0, abs(planes[0].direction @ np.array([0, 0, 1.0]))))
        assert math.degrees(angle) < 0.5
        assert len(lines) == 0

    def test_single_vertical_pole(self):
        scene = SceneSpec(
            lines=[LinePrimitive(np.array([0.0, 0.0, 2.0]), np.array([0.0, 0.0, 1.0]), 6.0)],
            line_density=120.0,
            noise_sigma=0.005,
        )
        cloud = synth_scene(scene, RigidTransform.identity("L", "W"), seed=21)
        lines, planes = extract_features(cloud, seed=0)
        assert len(lines) == 1
        angle = math.acos(min(1.0, abs(lines[0].direction @ np.array([0, 0, 1.0]))))
        assert math.degrees(angle) < 0.5
        assert len(planes) == 0  # collinear points must not yield a plane

    def test_uniform_ball_yields_nothing(self):
        rng = np.random.Generator(np.random.Philox(22))
        pts = rng.uniform(-12.0, 12.0, (2000, 3))
        pts = pts[np.linalg.norm(pts, axis=1) <= 12.0]
        lines, planes = extract_features(
            PointCloud("L", pts), FeatureConfig(cluster_tol=2.0), seed=7
        )
        assert lines == [] and planes == []

    def test_structured_scene_finds_lines_and_planes(self):
        cloud = structured_cloud(seed=23)
        lines, planes = extract_features(cloud, seed=0)
        assert len(planes) >= 3
        assert len(lines) >= 2
        dirs = np.array([ln.direction for ln in lines])
        # at least two clearly non-parallel line directions
        dots = np.abs(dirs @ dirs.T)
        assert (dots < 0.9).any()

    def test_tiny_cloud_returns_empty(self):
        lines, planes = extract_features(PointCloud("L", np.zeros((5, 3))))
        assert lines == [] and planes == []

    def test_seeded_determinism(self):
        cloud = structured_cloud(seed=24)
        a = extract_features(cloud, seed=3)
        b = extract_features(cloud, seed=3)
        assert len(a[0]) == len(b[0]) and len(a[1]) == len(b[1])
        for fa, fb in zip(a[0] + a[1], b[0] + b[1]):
            assert np.array_equal(fa.direction, fb.direction)
            assert np.array_equal(fa.center, fb.center)


def _line(direction, center):
    return Feature("line", np.asarray(direction, float), np.asarray(center, float), 50, 0.01)


def _plane(normal, center):
    return Feature("plane", np.asarray(normal, float), np.asarray(center, float), 200, 0.005)


class TestMatchFeatures:
    def test_identical_lists_fully_matched(self):
        feats = [_line([0, 0, 1], [1, 0, 0]), _line([1, 0, 0], [0, 2, 0]), _plane([0, 1, 0], [5, 0, 0])]
        pairs = match_features(feats, list(feats), math.radians(5), 0.5)
        assert len(pairs) == 3
        assert all(p.alpha == 0.0 and p.delta == 0.0 for p in pairs)

    def test_rotation_gate(self):
        r = rot_z(math.radians(3.0))
        a = [_line([1, 0, 0], [0, 0, 0]), _line([0, 1, 0], [1, 1, 0])]
        b = [
            Feature("line", r @ f.direction, r @ f.center, 50, 0.01) for f in a
        ]
        within = match_features(a, b, math.radians(5), 0.5)
        assert len(within) == 2
        outside = match_features(a, b, math.radians(1), 0.5)
        assert len(outside) == 0

    def test_parallel_lines_use_point_to_line_distance(self):
        a = [_line([0, 0, 1], [0, 0, 0])]
        b = [_line([0, 0, 1], [0.2, 0.0, 5.0])]  # same direction, offset 0.2 m
        pairs = match_features(a, b, math.radians(5), 0.5)
        assert len(pairs) == 1
        assert abs(pairs[0].delta - 0.2) < 1e-12

    def test_plane_delta_is_normal_offset(self):
        a = [_plane([0, 0, 1], [0, 0, 0])]
        b = [_plane([0, 0, 1], [3.0, 4.0, 0.1])]  # large in-plane shift is fine
        pairs = match_features(a, b, math.radians(5), 0.3)
        assert len(pairs) == 1
        assert abs(pairs[0].delta - 0.1) < 1e-12

    def test_one_to_one(self):
        a = [_line([0, 0, 1], [0, 0, 0])]
        b = [_line([0, 0, 1], [0.01, 0, 0]), _line([0, 0, 1], [0.05, 0, 0])]
        pairs = match_features(a, b, math.radians(5), 0.5)
        assert len(pairs) == 1
        assert abs(pairs[0].delta - 0.01) < 1e-12


class TestRefineExtrinsics:
    @staticmethod
    def _pairs_through(t: RigidTransform, n=100, seed=30):
        rng = np.random.Generator(np.random.Philox(seed))
        pairs = []
        for _ in range(n):
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            c = rng.uniform(-10, 10, 3)
            fa = Feature("line", d, c, 50, 0.0)
            fb = fa.transformed(t)
            pairs.append(MatchPair(fa, fb, 0.0, 0.0))
        return pairs

    def test_identity_pairs(self):
        t = RigidTransform.identity("a", "b")
        pairs = self._pairs_through(t)
        out = refine_extrinsics(pairs)
        assert geodesic_angle(out.rotation, np.eye(3)) < 1e-12
        assert np.abs(out.translation).max() < 1e-12

    def test_recovers_small_perturbation_exactly(self):
        r = rotvec_to_matrix(math.radians(2.0) * np.array([0.3, -0.5, 0.81]))
        t = RigidTransform(r, np.array([0.2, -0.05, 0.1]), "a", "b")
        pairs = self._pairs_through(t, n=100)
        out = refine_extrinsics(pairs, n_pairs=100)
        assert geodesic_angle(out.rotation, t.rotation) < 1e-6
        assert np.abs(out.translation - t.translation).max() < 1e-6

    def test_parallel_lines_degenerate(self):
        fa = _line([0, 0, 1], [0, 0, 0])
        fb = _line([0, 0, 1], [1, 0, 0])
        pairs = [MatchPair(fa, fb, 0.0, 1.0), MatchPair(fa, fb, 0.0, 1.0)]
        with pytest.raises(DegenerateInput):
            refine_extrinsics(pairs)

    def test_rotation_agrees_with_kabsch(self):
        from rigidcal.geometry import kabsch_rotation

        r = rotvec_to_matrix([0.02, 0.01, -0.03])
        t = RigidTransform(r, np.zeros(3), "a", "b")
        pairs = self._pairs_through(t, n=40, seed=31)
        out = refine_extrinsics(pairs, n_pairs=40)
        d_a = np.array([p.a.direction for p in pairs])
        d_b_raw = np.array([p.a.direction @ r.T for p in pairs])
        r_kabsch = kabsch_rotation(d_a, d_b_raw)
        assert geodesic_angle(out.rotation, r_kabsch) < 1e-6


class TestVerifyExtrinsics:
    @staticmethod
    def _plane_sets(t_true: RigidTransform):
        planes_a = [
            _plane([0, 0, 1], [10, 0, -2.0]),
            _plane([1, 0, 0], [25, 0, 1.0]),
            _plane([0, 1, 0], [12, 8, 1.0]),
        ]
        inv = t_true.inverse()
        planes_b = [f.transformed(inv) for f in planes_a]
        return planes_a, planes_b

    def test_truth_verifies(self):
        t_true = RigidTransform(rot_z(0.3), np.array([1.0, -0.5, 0.2]), "L", "B")
        planes_a, planes_b = self._plane_sets(t_true)
        ok, diag = verify_extrinsics(planes_a, planes_b, t_true)
        assert ok is True
        assert diag["n_matched"] == 3

    def test_two_degree_yaw_rejected(self):
        t_true = RigidTransform(rot_z(0.3), np.array([1.0, -0.5, 0.2]), "L", "B")
        planes_a, planes_b = self._plane_sets(t_true)
        bad = RigidTransform(rot_z(math.radians(2.0)) @ t_true.rotation, t_true.translation, "L", "B")
        ok, _ = verify_extrinsics(planes_a, planes_b, bad)
        assert ok is False

    def test_half_meter_shift_rejected(self):
        t_true = RigidTransform(rot_z(0.3), np.array([1.0, -0.5, 0.2]), "L", "B")
        planes_a, planes_b = self._plane_sets(t_true)
        bad = RigidTransform(t_true.rotation, t_true.translation + [0.5, 0, 0], "L", "B")
        ok, _ = verify_extrinsics(planes_a, planes_b, bad)
        assert ok is False

    def test_no_planes_is_inconclusive(self):
        t = RigidTransform.identity("L", "B")
        with pytest.raises(NoPlanes):
            verify_extrinsics([], [_plane([0, 0, 1], [0, 0, 0])], t)


class TestComposeExtrinsics:
    def test_all_identity(self):
        t = compose_extrinsics(
            RigidTransform.identity("L", "B"),
            RigidTransform.identity("B", "B"),
            RigidTransform.identity("B", "B"),
            RigidTransform.identity("B", "B"),
        )
        assert np.abs(t.as_matrix() - np.eye(4)).max() == 0.0
        assert t.from_frame == "L" and t.to_frame == "B"

    def test_pointwise_application_oracle(self):
        rng = np.random.Generator(np.random.Philox(63))

        def rand_t(fr, to):
            from rigidcal.geometry import quat_to_matrix, quat_normalize

            r = quat_to_matrix(quat_normalize(rng.standard_normal(4)))
            return RigidTransform(r, rng.standard_normal(3), fr, to)

        t_init = rand_t("L", "B")
        t_imu = rand_t("B", "B")
        t_gicp = rand_t("B", "B")
        t_ref = rand_t("B", "B")
        total = compose_extrinsics(t_init, t_imu, t_gicp, t_ref)
        pts = rng.standard_normal((10, 3))
        seq = t_ref.apply(t_gicp.apply(t_imu.apply(t_init.apply(pts))))
        assert np.abs(total.apply(pts) - seq).max() < 1e-12

    def test_frame_mismatch(self):
        with pytest.raises(FrameMismatch):
            compose_extrinsics(
                RigidTransform.identity("L", "B"),
                RigidTransform.identity("X", "B"),
                RigidTransform.identity("B", "B"),
                RigidTransform.identity("B", "B"),
            )


class TestFeatureBasics:
    def test_canonical_direction(self):
        assert np.allclose(canonical_direction([-1.0, 0.0, 0.0]), [1.0, 0.0, 0.0])
        assert np.allclose(canonical_direction([0.0, -2.0, 0.0]), [0.0, 1.0, 0.0])

    def test_feature_direction_canonicalized(self):
        f = Feature("line", [0.0, 0.0, -3.0], [0, 0, 0], 10, 0.0)
        assert f.direction[2] == 1.0
        assert abs(np.linalg.norm(f.direction) - 1.0) < 1e-12

    def test_kind_mismatch_rejected(self):
        with pytest.raises(ValueError):
            MatchPair(_line([0, 0, 1], [0, 0, 0]), _plane([0, 0, 1], [0, 0, 0]), 0.0, 0.0)


class TestSceneFeatureConsistency:
    def test_two_viewpoints_related_by_rotation(self):
        scene = default_scene(noise_sigma=0.003)
        pose_a = RigidTransform.identity("A", "W")
        r = rot_z(math.radians(10.0))
        pose_b = RigidTransform(r, np.array([0.5, 0.3, 0.0]), "Bv", "W")
        cloud_a = synth_scene(scene, pose_a, seed=40)
        cloud_b = synth_scene(scene, pose_b, seed=41)
        _, planes_a = extract_features(cloud_a, seed=1)
        _, planes_b = extract_features(cloud_b, seed=1)
        assert len(planes_a) >= 3 and len(planes_b) >= 3
        t_ab = pose_a.inverse() @ pose_b  # maps b-frame coords into a-frame
        moved = [f.transformed(t_ab) for f in planes_b]
        pairs = match_features(planes_a, moved, math.radians(1.0), 0.3)
        assert len(pairs) >= 3
