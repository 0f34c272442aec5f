"""Estimator-style wrappers around the two calibration stages.

Both classes follow the scikit-learn conventions: hyperparameters are set
verbatim in ``__init__`` (so ``get_params``/``set_params``/``clone`` work),
``fit`` performs the computation and stores results in trailing-underscore
attributes, and ``transform`` maps sensor-frame points into the base frame
with the fitted extrinsics.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from .cloud import (
    FeatureConfig,
    IcpConfig,
    PointCloud,
    box_filter,
    extract_features,
    icp_align,
    match_features,
    refine_extrinsics,
    verify_extrinsics,
)
from .errors import DegenerateInput, NoPlanes, RigidCalError
from .geometry import RigidTransform
from .imu import ImuConditioner, ImuSeries
from .observability import DEFAULT_THRESHOLD
from .signal_calib import SignalCalibConfig, TranslationBounds, calibrate_imu_pair
from .validation import check_points, check_vector3


class ImuExtrinsicCalibrator(BaseEstimator):
    """Extrinsics between two rigidly mounted IMUs from raw signal matching.

    Parameters
    ----------
    grid_rate_hz : float
        Common resampling rate for the two streams.
    window_s, obs_threshold : float
        Excitation gate: window length and minimum-singular-value threshold.
    bounds_margin : float
        Half-width [m] of the translation box around the initial guess.
    rest_tau, min_rest_s, beta : float
        Conditioning knobs (rest threshold, minimum rest duration,
        orientation correction gain).
    eq_block_s : float
        Averaging span for the lever-arm equations.
    estimate_offset : bool
        Absorb a shared constant acceleration residual in the lever-arm fit.
    use_specific_force : bool
        Match bias-compensated specific forces in the lever-arm stage so
        gravity cancels through the estimated rotation.

    Attributes
    ----------
    extrinsics_ : RigidTransform
        Pose of the second sensor in the first sensor's frame.
    estimate_ : ImuExtrinsicsEstimate
        Residual diagnostics and the accepted-window reports.
    conditioning_ : dict
        Per-stream conditioning summaries.
    """

    def __init__(
        self,
        grid_rate_hz: float = 100.0,
        window_s: float = 10.0,
        obs_threshold: float = DEFAULT_THRESHOLD,
        bounds_margin: float = 0.3,
        rest_tau: float = 0.15,
        min_rest_s: float = 2.0,
        beta: float = 0.05,
        eq_block_s: float = 0.25,
        estimate_offset: bool = True,
        use_specific_force: bool = True,
    ):
        self.grid_rate_hz = grid_rate_hz
        self.window_s = window_s
        self.obs_threshold = obs_threshold
        self.bounds_margin = bounds_margin
        self.rest_tau = rest_tau
        self.min_rest_s = min_rest_s
        self.beta = beta
        self.eq_block_s = eq_block_s
        self.estimate_offset = estimate_offset
        self.use_specific_force = use_specific_force

    def fit(self, base: ImuSeries, sensor: ImuSeries, t_init=(0.0, 0.0, 0.0)):
        t_init = check_vector3(t_init, "t_init")
        conditioner = ImuConditioner(self.rest_tau, self.min_rest_s, self.beta)
        cond_base = conditioner.run(base)
        cond_sensor = conditioner.run(sensor)
        config = SignalCalibConfig(
            grid_rate_hz=self.grid_rate_hz,
            window_s=self.window_s,
            obs_threshold=self.obs_threshold,
            eq_block_s=self.eq_block_s,
            estimate_offset=self.estimate_offset,
            bounds_margin=self.bounds_margin,
        )
        translation_series = None
        if self.use_specific_force:
            translation_series = (cond_base.specific_force, cond_sensor.specific_force)
        self.estimate_ = calibrate_imu_pair(
            cond_base.compensated,
            cond_sensor.compensated,
            TranslationBounds.around(t_init, self.bounds_margin),
            t_init,
            config,
            translation_series=translation_series,
        )
        self.extrinsics_ = self.estimate_.transform
        self.conditioning_ = {
            base.frame: cond_base,
            sensor.frame: cond_sensor,
        }
        return self

    def transform(self, X) -> np.ndarray:
        """Map sensor-frame points (N, 3) into the base frame."""
        if not hasattr(self, "extrinsics_"):
            raise RigidCalError("calibrator is not fitted")
        return self.extrinsics_.apply(check_points(X, "X"))


class PointCloudCalibrator(BaseEstimator):
    """Refine and verify extrinsics between two lidar clouds.

    ``fit(src, dst, init)`` runs box filtering, point-to-plane alignment
    seeded by ``init``, line-feature refinement, and plane-feature
    verification.

    Attributes
    ----------
    extrinsics_ : RigidTransform
        Final transform mapping src-frame points into the dst frame.
    icp_ : IcpResult
        Alignment diagnostics.
    refined_factor_ : RigidTransform
        Left-multiplicative correction from line matching.
    verified_ : bool or None
        Plane-gate outcome; None when no planes were available.
    verification_ : dict
        Per-pair angles/offsets and gate settings.
    """

    def __init__(
        self,
        voxel_size: float = 0.2,
        max_corr_dist: float = 1.0,
        icp_iterations: int = 50,
        box_min: tuple = (0.0, -10.0, -10.0),
        box_max: tuple = (50.0, 10.0, 10.0),
        line_gate_deg: float = 5.0,
        line_gate_m: float = 0.5,
        plane_gate_deg: float = 1.0,
        plane_gate_m: float = 0.3,
        n_line_pairs: int = 100,
        feature_seed: int = 0,
    ):
        self.voxel_size = voxel_size
        self.max_corr_dist = max_corr_dist
        self.icp_iterations = icp_iterations
        self.box_min = box_min
        self.box_max = box_max
        self.line_gate_deg = line_gate_deg
        self.line_gate_m = line_gate_m
        self.plane_gate_deg = plane_gate_deg
        self.plane_gate_m = plane_gate_m
        self.n_line_pairs = n_line_pairs
        self.feature_seed = feature_seed

    def fit(self, src: PointCloud, dst: PointCloud, init: RigidTransform):
        src_f = box_filter(src, np.asarray(self.box_min, float), np.asarray(self.box_max, float))
        dst_f = box_filter(dst, np.asarray(self.box_min, float), np.asarray(self.box_max, float))
        if len(src_f) == 0 or len(dst_f) == 0:
            src_f, dst_f = src, dst  # degenerate filter boxes fall back to raw clouds

        icp_cfg = IcpConfig(
            voxel_size=self.voxel_size,
            max_corr_dist=self.max_corr_dist,
            max_iterations=self.icp_iterations,
        )
        self.icp_ = icp_align(src_f, dst_f, init, icp_cfg)
        aligned = self.icp_.transform

        feat_cfg = FeatureConfig()
        moved = src_f.transformed(aligned)
        lines_moved, planes_moved = extract_features(moved, feat_cfg, seed=self.feature_seed)
        lines_dst, planes_dst = extract_features(dst_f, feat_cfg, seed=self.feature_seed + 1)
        self.features_src_ = (lines_moved, planes_moved)
        self.features_dst_ = (lines_dst, planes_dst)

        pairs = match_features(
            lines_moved, lines_dst, math.radians(self.line_gate_deg), self.line_gate_m
        )
        self.line_pairs_ = pairs
        try:
            factor = refine_extrinsics(
                pairs, self.n_line_pairs, from_frame=dst.frame, to_frame=dst.frame
            )
        except DegenerateInput:
            factor = RigidTransform.identity(dst.frame, dst.frame)
        self.refined_factor_ = factor
        self.extrinsics_ = factor @ aligned

        planes_src_raw = [f.transformed(aligned.inverse()) for f in planes_moved]
        try:
            ok, diag = verify_extrinsics(
                planes_dst,
                planes_src_raw,
                self.extrinsics_,
                math.radians(self.plane_gate_deg),
                self.plane_gate_m,
            )
            self.verified_ = ok
            self.verification_ = diag
        except NoPlanes as exc:
            self.verified_ = None
            self.verification_ = {"inconclusive": str(exc)}
        return self

    def transform(self, X) -> np.ndarray:
        """Map src-frame points (N, 3) into the dst frame."""
        if not hasattr(self, "extrinsics_"):
            raise RigidCalError("calibrator is not fitted")
        return self.extrinsics_.apply(check_points(X, "X"))
