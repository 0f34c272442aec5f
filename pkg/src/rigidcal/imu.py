"""Per-IMU signal conditioning.

Turns a raw inertial stream into bias-compensated angular velocity and
gravity-free linear acceleration:

1. gravity alignment from a static window (or a motion-averaged fallback
   when the stream never rests),
2. rest detection against the aligned gravity vector,
3. accelerometer bias from rest-window statistics,
4. gyro bias tracked by a small Kalman filter, re-initialized from each
   rest window,
5. complementary (gradient-corrected) orientation between rests.

Frame conventions: each stream gets a gravity-aligned anchor frame fixed at
initialization. ``q_bi`` is the sensor orientation in that anchor frame;
``r_wb`` is the anchor tilt in the world (z-up) frame with zero yaw.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CoverageGap, NotAtRest
from .geometry import (
    QUAT_IDENTITY,
    quat_conjugate,
    quat_propagate,
    quat_rotate,
    quat_rotate_many,
    quat_to_matrix,
    rotation_zyx,
    skew,
)
from .validation import as_float_array, check_rotation_matrix, check_vector3

logger = logging.getLogger(__name__)

STANDARD_GRAVITY = 9.80665
GRAVITY_W = np.array([0.0, 0.0, -STANDARD_GRAVITY])

DEFAULT_REST_TAU = 0.15  # [m/s^2]
DEFAULT_MIN_REST_S = 2.0
DEFAULT_MADGWICK_BETA = 0.05

KF_PROCESS_STD = math.radians(0.05)  # [rad/s] per step
KF_INIT_STD = math.radians(0.5)  # [rad/s]
_VAR_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------


@dataclass
class ImuSeries:
    """Time-stamped gyro + accelerometer samples in one sensor frame.

    Attributes
    ----------
    frame : str
        Sensor frame tag.
    rate_hz : float
        Nominal sampling frequency.
    t_ns : ndarray (N,), int64
        Strictly increasing timestamps [ns].
    omega : ndarray (N, 3)
        Angular velocity [rad/s].
    accel : ndarray (N, 3)
        Specific force [m/s^2].
    """

    frame: str
    rate_hz: float
    t_ns: np.ndarray
    omega: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        self.t_ns = np.asarray(self.t_ns, dtype=np.int64)
        self.omega = as_float_array(self.omega, "omega")
        self.accel = as_float_array(self.accel, "accel")
        n = len(self.t_ns)
        if self.omega.shape != (n, 3) or self.accel.shape != (n, 3):
            raise ValueError("omega and accel must have shape (N, 3) matching t_ns")
        if n > 1 and np.any(np.diff(self.t_ns) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")
        gaps = self.gap_flags
        if np.any(gaps):
            logger.warning(
                "%s: %d inter-sample gaps deviate >50%% from the nominal period",
                self.frame,
                int(gaps.sum()),
            )

    def __len__(self) -> int:
        return len(self.t_ns)

    @property
    def time_s(self) -> np.ndarray:
        return (self.t_ns - self.t_ns[0]) * 1e-9

    @property
    def duration_s(self) -> float:
        if len(self.t_ns) < 2:
            return 0.0
        return float(self.t_ns[-1] - self.t_ns[0]) * 1e-9

    @property
    def gap_flags(self) -> np.ndarray:
        """Mark gaps deviating more than 50% from the nominal period."""
        if len(self.t_ns) < 2:
            return np.zeros(0, dtype=bool)
        nominal = 1e9 / self.rate_hz
        dt = np.diff(self.t_ns)
        return np.abs(dt - nominal) > 0.5 * nominal

    def window(self, lo: int, hi: int) -> "ImuSeries":
        return ImuSeries(self.frame, self.rate_hz, self.t_ns[lo:hi], self.omega[lo:hi], self.accel[lo:hi])


def _default_accel_noise() -> np.ndarray:
    return np.zeros((3, 3))


@dataclass
class BiasState:
    """Bias estimates plus the gyro-bias filter state."""

    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_noise: np.ndarray = field(default_factory=_default_accel_noise)
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_cov: np.ndarray = field(default_factory=lambda: KF_INIT_STD**2 * np.eye(3))
    gyro_noise: np.ndarray = field(default_factory=lambda: 1e-4 * np.eye(3))
    process_noise: np.ndarray = field(default_factory=lambda: KF_PROCESS_STD**2 * np.eye(3))


@dataclass
class OrientationState:
    """Anchor-frame attitude plus the frozen gravity alignment."""

    q_bi: np.ndarray
    gravity_w: np.ndarray = field(default_factory=lambda: GRAVITY_W.copy())
    r_wb: np.ndarray = field(default_factory=lambda: np.eye(3))

    @property
    def gravity_b(self) -> np.ndarray:
        """Gravity (pointing down) in the anchor frame, frozen at init."""
        return self.r_wb.T @ self.gravity_w


@dataclass
class RestWindow:
    """Statistics of one confirmed rest interval."""

    t_start: int
    t_end: int
    lo: int
    hi: int
    accel_bias: np.ndarray
    accel_noise: np.ndarray
    gyro_bias: np.ndarray
    gyro_noise: np.ndarray


@dataclass
class OrientationTimeline:
    """Per-sample orientation history for one stream."""

    t_ns: np.ndarray
    quats: np.ndarray
    r_wb: np.ndarray
    gravity_w: np.ndarray = field(default_factory=lambda: GRAVITY_W.copy())

    @property
    def gravity_b(self) -> np.ndarray:
        return self.r_wb.T @ self.gravity_w


@dataclass
class BiasTimeline:
    """Per-sample bias history (sensor frame) for one stream."""

    t_ns: np.ndarray
    accel_bias: np.ndarray
    gyro_bias: np.ndarray
    windows: list[RestWindow] = field(default_factory=list)


def _lookup_indices(hist_t: np.ndarray, query_t: np.ndarray, what: str) -> np.ndarray:
    """Nearest-previous indices of query timestamps in a history grid."""
    if len(hist_t) == 0:
        raise CoverageGap(f"{what} history is empty")
    tol = int(np.median(np.diff(hist_t))) if len(hist_t) > 1 else 0
    idx = np.searchsorted(hist_t, query_t, side="right") - 1
    if np.any(query_t < hist_t[0]) or np.any(query_t > hist_t[-1] + tol):
        raise CoverageGap(f"samples fall outside the {what} history span")
    return np.clip(idx, 0, len(hist_t) - 1)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def tilt_from_accel(mean_accel) -> tuple[float, float]:
    """Roll and pitch of a static sensor from its mean specific force."""
    a = check_vector3(mean_accel, "mean_accel")
    roll = math.atan2(a[1], a[2])
    pitch = math.atan2(-a[0], math.hypot(a[1], a[2]))
    return roll, pitch


def _static_window_ok(series: ImuSeries, tau: float, gravity: float) -> bool:
    mean_a = series.accel.mean(axis=0)
    if abs(np.linalg.norm(mean_a) - gravity) > tau:
        return False
    if np.linalg.norm(series.accel - mean_a, axis=1).max() > tau:
        return False
    # a resting platform also shows near-zero angular rate
    return bool(np.linalg.norm(series.omega, axis=1).max() <= 0.05)


def gravity_align_init(
    static_samples: ImuSeries,
    tau: float = DEFAULT_REST_TAU,
    gravity: float = STANDARD_GRAVITY,
) -> np.ndarray:
    """Anchor tilt R_WB (zero yaw) from a static window.

    Raises
    ------
    NotAtRest
        If the window is shorter than 2 s or fails the static check.
    """
    if static_samples.duration_s < 2.0:
        raise NotAtRest("gravity alignment needs at least 2 s of static samples")
    if not _static_window_ok(static_samples, tau, gravity):
        raise NotAtRest("window does not satisfy the static condition")
    roll, pitch = tilt_from_accel(static_samples.accel.mean(axis=0))
    return rotation_zyx(roll, pitch, 0.0)


def predicted_rest_accel(q_bi, gravity_b) -> np.ndarray:
    """Specific force a resting sensor should read, given its attitude."""
    return quat_rotate(quat_conjugate(q_bi), -np.asarray(gravity_b, dtype=float))


def detect_rest(
    window: ImuSeries,
    state: OrientationState,
    tau: float = DEFAULT_REST_TAU,
    min_duration: float = DEFAULT_MIN_REST_S,
) -> bool:
    """True iff every sample's accel matches the aligned gravity within tau.

    The window's accelerometer signal is assumed bias-compensated. Raises
    ValueError when the window is shorter than ``min_duration``.
    """
    if window.duration_s < min_duration:
        raise ValueError(
            f"window of {window.duration_s:.3f} s is shorter than min_duration={min_duration} s"
        )
    expected = predicted_rest_accel(state.q_bi, state.gravity_b)
    residual = np.linalg.norm(window.accel - expected, axis=1)
    return bool(residual.max() <= tau)


def estimate_accel_bias(
    rest_window: ImuSeries,
    r_hat_bi,
    r_wb,
    g_w=GRAVITY_W,
    tau: float = DEFAULT_REST_TAU,
) -> tuple[np.ndarray, np.ndarray]:
    """Accelerometer bias and noise covariance from a rest window.

    Returns the window-mean residual against the predicted gravity reaction
    and the diagonal per-axis variance of that residual. Both are held
    constant until the next rest window.
    """
    r_hat_bi = check_rotation_matrix(r_hat_bi, "r_hat_bi")
    r_wb = check_rotation_matrix(r_wb, "r_wb")
    g_w = check_vector3(g_w, "g_w")
    reaction = -(r_hat_bi.T @ (r_wb.T @ g_w))
    residual = rest_window.accel - reaction
    bias = residual.mean(axis=0)
    if np.linalg.norm(residual - bias, axis=1).max() > tau:
        raise NotAtRest("window accel deviates from the aligned gravity vector")
    noise = np.diag(((residual - bias) ** 2).mean(axis=0))
    return bias, noise


def gyro_bias_kf_step(state: BiasState, y_t, r_hat_bi) -> BiasState:
    """One predict + update cycle of the gyro-bias filter.

    The measurement model is ``y = R x + w`` with R the current sensor
    attitude and w ~ N(0, gyro_noise); prediction adds the process noise.
    """
    y = check_vector3(y_t, "y_t")
    r = check_rotation_matrix(r_hat_bi, "r_hat_bi")
    p = state.gyro_cov + state.process_noise
    s = state.gyro_noise + r @ p @ r.T
    k = p @ r.T @ np.linalg.inv(s)
    x = state.gyro_bias + k @ (y - r @ state.gyro_bias)
    p_new = p - k @ r @ p
    p_new = 0.5 * (p_new + p_new.T)
    return replace(state, gyro_bias=x, gyro_cov=p_new)


def madgwick_update(
    q,
    accel_hat,
    omega,
    dt: float,
    beta: float = DEFAULT_MADGWICK_BETA,
    gravity_b=None,
) -> np.ndarray:
    """One gyro propagation step blended with a gravity-direction correction.

    ``accel_hat`` must be bias-compensated but still contain gravity. With
    ``beta == 0`` (or a zero-norm accel) the result is exactly the gyro
    propagation.

    Parameters
    ----------
    q : quaternion (4,)
        Current attitude of the sensor in its anchor frame.
    accel_hat : (3,)
        Measured specific force [m/s^2].
    omega : (3,)
        Bias-compensated angular rate [rad/s].
    dt : float
        Step length [s] (> 0).
    beta : float
        Correction gain [rad/s]; 0 disables the gradient step.
    gravity_b : (3,), optional
        Gravity vector (pointing down) in the anchor frame. Defaults to a
        level anchor (0, 0, -g).
    """
    q_prop = quat_propagate(q, omega, dt)
    if beta == 0.0:
        return q_prop
    a = np.asarray(accel_hat, dtype=float)
    a_norm = np.linalg.norm(a)
    if a_norm == 0.0:
        return q_prop
    g_b = GRAVITY_W if gravity_b is None else np.asarray(gravity_b, dtype=float)
    ref = -g_b / np.linalg.norm(g_b)  # unit reaction direction in the anchor frame
    w = q_prop[0]
    u = q_prop[1:]
    c = np.cross(u, ref)
    err = predicted_rest_accel(q_prop, g_b / np.linalg.norm(g_b)) - a / a_norm
    # Jacobian of R(q)^T ref with respect to [w, x, y, z]
    jac = np.empty((3, 4))
    jac[:, 0] = -2.0 * c
    jac[:, 1:] = -2.0 * skew(c) - 2.0 * skew(u) @ skew(ref) + 2.0 * w * skew(ref)
    grad = jac.T @ err
    norm = np.linalg.norm(grad)
    if norm < 1e-15:
        return q_prop
    corrected = q_prop - beta * dt * grad / norm
    return corrected / np.linalg.norm(corrected)


def compensate(series: ImuSeries, biases: BiasTimeline, orientation: OrientationTimeline) -> ImuSeries:
    """Remove bias and gravity from a raw stream.

    omega_hat = omega - b_gyro(t); accel_hat = accel - reaction(t) - b_accel(t)
    with reaction(t) the gravity reaction predicted from the orientation
    history. Raises CoverageGap when a sample is not covered by the histories.
    """
    idx_o = _lookup_indices(orientation.t_ns, series.t_ns, "orientation")
    idx_b = _lookup_indices(biases.t_ns, series.t_ns, "bias")
    quats = orientation.quats[idx_o]
    conj = quats.copy()
    conj[:, 1:] *= -1.0
    reaction = quat_rotate_many(conj, -orientation.gravity_b)
    omega_hat = series.omega - biases.gyro_bias[idx_b]
    accel_hat = series.accel - reaction - biases.accel_bias[idx_b]
    return ImuSeries(series.frame, series.rate_hz, series.t_ns.copy(), omega_hat, accel_hat)


# ---------------------------------------------------------------------------
# per-stream pipeline
# ---------------------------------------------------------------------------


@dataclass
class ConditioningResult:
    """Everything the conditioner learned about one stream."""

    compensated: ImuSeries
    specific_force: ImuSeries  # bias-compensated only; gravity retained
    orientation: OrientationTimeline
    biases: BiasTimeline
    rest_windows: list[RestWindow]
    p_trace: np.ndarray
    sigma_omega: np.ndarray | None
    sigma_accel: np.ndarray | None
    init_mode: str

    def to_summary(self) -> dict:
        return {
            "frame": self.compensated.frame,
            "init_mode": self.init_mode,
            "n_rest_windows": len(self.rest_windows),
            "rest_spans_s": [
                [w.t_start * 1e-9, w.t_end * 1e-9] for w in self.rest_windows
            ],
            "final_gyro_cov_trace": float(self.p_trace[-1]) if len(self.p_trace) else None,
            "initial_gyro_cov_trace": float(self.p_trace[0]) if len(self.p_trace) else None,
        }


class ImuConditioner:
    """Stateful per-IMU pipeline producing compensated signals.

    One instance owns one stream; distinct streams may be conditioned
    concurrently. ``run`` is deterministic: identical inputs yield identical
    results.
    """

    def __init__(
        self,
        rest_tau: float = DEFAULT_REST_TAU,
        min_rest_s: float = DEFAULT_MIN_REST_S,
        beta: float = DEFAULT_MADGWICK_BETA,
        gravity: float = STANDARD_GRAVITY,
        gyro_rest_tau: float = 0.02,
    ):
        if rest_tau <= 0 or min_rest_s <= 0:
            raise ValueError("rest_tau and min_rest_s must be positive")
        self.rest_tau = rest_tau
        self.min_rest_s = min_rest_s
        self.beta = beta
        self.gravity = gravity
        # a rest run also ends when the rate deviates from the run mean by
        # more than this [rad/s]; bias-insensitive, keeps ramp-in samples out
        # of the window statistics
        self.gyro_rest_tau = gyro_rest_tau

    # -- initialization -----------------------------------------------------

    def _init_anchor(self, series: ImuSeries) -> tuple[np.ndarray, str]:
        hi = int(np.searchsorted(series.t_ns, series.t_ns[0] + int(self.min_rest_s * 1e9) + 1))
        lead = series.window(0, max(hi, 2))
        try:
            return gravity_align_init(lead, self.rest_tau, self.gravity), "rest"
        except NotAtRest:
            return self._motion_averaged_anchor(series), "motion_mean"

    def _motion_averaged_anchor(self, series: ImuSeries) -> np.ndarray:
        """Tilt init without rest: de-rotate accel by the integrated gyro.

        Over (near-)periodic motion the body acceleration averages out in the
        de-rotated frame while gravity does not, so the mean of the de-rotated
        specific force points along the gravity reaction.
        """
        n = len(series)
        quats = np.empty((n, 4))
        quats[0] = QUAT_IDENTITY
        t_s = series.time_s
        for k in range(1, n):
            dt = t_s[k] - t_s[k - 1]
            quats[k] = quat_propagate(quats[k - 1], series.omega[k], dt)
        mean_reaction = quat_rotate_many(quats, series.accel).mean(axis=0)
        roll, pitch = tilt_from_accel(mean_reaction)
        return rotation_zyx(roll, pitch, 0.0)

    # -- main pass ----------------------------------------------------------

    def run(self, series: ImuSeries) -> ConditioningResult:
        if len(series) < 2:
            raise ValueError("conditioning needs at least 2 samples")
        r_wb, init_mode = self._init_anchor(series)
        g_b = r_wb.T @ np.array([0.0, 0.0, -self.gravity])

        n = len(series)
        t_s = series.time_s
        quats = np.empty((n, 4))
        gyro_bias = np.zeros((n, 3))
        accel_bias = np.zeros((n, 3))
        p_trace = np.empty(n)

        bias = BiasState()
        windows: list[RestWindow] = []
        cur_accel_bias = np.zeros(3)
        sigma_omega: np.ndarray | None = None
        sigma_accel: np.ndarray | None = None

        min_rest_ns = int(self.min_rest_s * 1e9)
        run_start: int | None = None
        confirmed = False
        run_sum = np.zeros(3)
        run_n = 0

        def finalize(lo: int, hi: int):
            nonlocal cur_accel_bias, sigma_omega, sigma_accel, bias
            w_quats = quats[lo:hi].copy()
            w_quats[:, 1:] *= -1.0
            reaction = quat_rotate_many(w_quats, -g_b)
            residual = series.accel[lo:hi] - reaction
            b_a = residual.mean(axis=0)
            sigma_accel = np.diag(((residual - b_a) ** 2).mean(axis=0))
            b_w = series.omega[lo:hi].mean(axis=0)
            sigma_omega = np.diag(np.maximum(series.omega[lo:hi].var(axis=0), _VAR_FLOOR))
            cur_accel_bias = b_a
            # re-initialize the filter state from the window statistics
            bias = replace(bias, gyro_bias=b_w, gyro_noise=sigma_omega)
            accel_bias[lo:hi] = b_a
            gyro_bias[lo:hi] = b_w
            windows.append(
                RestWindow(
                    t_start=int(series.t_ns[lo]),
                    t_end=int(series.t_ns[hi - 1]),
                    lo=lo,
                    hi=hi,
                    accel_bias=b_a,
                    accel_noise=sigma_accel,
                    gyro_bias=b_w,
                    gyro_noise=sigma_omega,
                )
            )

        quats[0] = QUAT_IDENTITY
        p_trace[0] = float(np.trace(bias.gyro_cov))
        expected0 = predicted_rest_accel(quats[0], g_b)
        if np.linalg.norm(series.accel[0] - cur_accel_bias - expected0) <= self.rest_tau:
            run_start = 0
            run_sum = series.omega[0].copy()
            run_n = 1

        for k in range(1, n):
            dt = t_s[k] - t_s[k - 1]
            b_w_sensor = quat_to_matrix(quats[k - 1]) @ bias.gyro_bias
            a_comp = series.accel[k] - cur_accel_bias
            quats[k] = madgwick_update(
                quats[k - 1], a_comp, series.omega[k] - b_w_sensor, dt, self.beta, g_b
            )
            r_k = quat_to_matrix(quats[k])

            # rest-state machine on the gravity residual; once a run exists,
            # a rate deviation from the run mean also ends it
            residual = np.linalg.norm(a_comp - predicted_rest_accel(quats[k], g_b))
            at_rest = residual <= self.rest_tau
            if at_rest and run_n > 0:
                if np.linalg.norm(series.omega[k] - run_sum / run_n) > self.gyro_rest_tau:
                    at_rest = False
            if at_rest:
                if run_start is None:
                    run_start = k
                    confirmed = False
                    run_sum = series.omega[k].copy()
                    run_n = 1
                else:
                    run_sum += series.omega[k]
                    run_n += 1
            if at_rest and run_start is not None and not confirmed:
                if series.t_ns[k] - series.t_ns[run_start] >= min_rest_ns:
                    confirmed = True
                    seg = series.omega[run_start : k + 1]
                    bias = replace(
                        bias,
                        gyro_bias=seg.mean(axis=0),
                        gyro_noise=np.diag(np.maximum(seg.var(axis=0), _VAR_FLOOR)),
                    )

            bias = replace(bias, gyro_cov=bias.gyro_cov + bias.process_noise)
            if at_rest and confirmed:
                # measurement update with y = raw gyro (true rate is zero)
                p = bias.gyro_cov
                s = bias.gyro_noise + r_k @ p @ r_k.T
                gain = p @ r_k.T @ np.linalg.inv(s)
                x = bias.gyro_bias + gain @ (series.omega[k] - r_k @ bias.gyro_bias)
                p_new = p - gain @ r_k @ p
                bias = replace(bias, gyro_bias=x, gyro_cov=0.5 * (p_new + p_new.T))
            elif not at_rest and run_start is not None:
                if confirmed:
                    finalize(run_start, k)
                run_start = None
                confirmed = False
                run_sum = np.zeros(3)
                run_n = 0

            p_trace[k] = float(np.trace(bias.gyro_cov))
            gyro_bias[k] = r_k @ bias.gyro_bias
            accel_bias[k] = cur_accel_bias

        if run_start is not None and confirmed:
            finalize(run_start, n)

        if windows:
            # biases are undefined before the first rest; backfill with it
            lo0 = windows[0].lo
            accel_bias[:lo0] = windows[0].accel_bias
            gyro_bias[:lo0] = windows[0].gyro_bias

        orientation = OrientationTimeline(series.t_ns.copy(), quats, r_wb)
        biases = BiasTimeline(series.t_ns.copy(), accel_bias, gyro_bias, windows)
        compensated = compensate(series, biases, orientation)
        # gravity-inclusive variant: the cross-sensor difference cancels
        # gravity geometrically, without trusting the orientation estimate
        specific_force = ImuSeries(
            series.frame,
            series.rate_hz,
            series.t_ns.copy(),
            compensated.omega.copy(),
            series.accel - accel_bias,
        )
        return ConditioningResult(
            compensated=compensated,
            specific_force=specific_force,
            orientation=orientation,
            biases=biases,
            rest_windows=windows,
            p_trace=p_trace,
            sigma_omega=sigma_omega,
            sigma_accel=sigma_accel,
            init_mode=init_mode,
        )
