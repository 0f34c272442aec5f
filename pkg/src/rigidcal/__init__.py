"""Target-less multi-sensor extrinsic calibration.

Initial extrinsics come from matching the raw inertial signals of IMUs
co-located with each sensor; motion windows are gated by an excitation
criterion; point-cloud alignment and line-feature matching refine the
estimate and plane features verify it. A built-in rigid-body simulation
provides ground truth for every stage.
"""

from .cloud import (
    Feature,
    FeatureConfig,
    IcpConfig,
    MatchPair,
    PointCloud,
    box_filter,
    compose_extrinsics,
    extract_features,
    icp_align,
    match_features,
    refine_extrinsics,
    verify_extrinsics,
)
from .errors import (
    ConfigError,
    CoverageGap,
    DegenerateInput,
    FrameMismatch,
    IllConditioned,
    InsufficientExcitation,
    NoConvergence,
    NoOverlap,
    NoPlanes,
    NotAtRest,
    RigidCalError,
    TooSparse,
)
from .estimators import ImuExtrinsicCalibrator, PointCloudCalibrator
from .geometry import (
    RigidTransform,
    davenport_rotation,
    kabsch_rotation,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_multiply,
    quat_normalize,
    quat_propagate,
    quat_to_matrix,
)
from .imu import (
    BiasState,
    ImuConditioner,
    ImuSeries,
    OrientationState,
    compensate,
    detect_rest,
    estimate_accel_bias,
    gravity_align_init,
    gyro_bias_kf_step,
    madgwick_update,
)
from .observability import SegmentReport, fisher_info, segment_select
from .pipeline import CalibrationReport, CalibrationResult, run_calibration, simulate_dataset
from .signal_calib import (
    ImuExtrinsicsEstimate,
    TranslationBounds,
    angular_accel,
    bvls_solve,
    calibrate_imu_pair,
    estimate_rotation,
    estimate_translation,
    resample_align,
)
from .sim import (
    SceneSpec,
    SensorMountSpec,
    TrajectorySpec,
    gen_trajectory,
    synth_imu,
    synth_scene,
)

__version__ = "0.1.0"
