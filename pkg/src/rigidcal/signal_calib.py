"""IMU-to-IMU extrinsic initialization by raw signal matching.

Two bias-compensated inertial streams from the same rigid body are
interpolated onto a common grid; the mounting rotation comes from aligning
the angular-velocity vectors (a rigid body has one angular velocity), and
the lever arm comes from the centrifugal and angular-acceleration terms
that relate the two accelerometers, solved as a box-bounded least-squares
problem around the CAD-derived initial translation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IllConditioned, InsufficientExcitation, NoOverlap
from .geometry import RigidTransform, kabsch_rotation
from .imu import ImuSeries
from .observability import (
    DEFAULT_THRESHOLD,
    DEFAULT_WINDOW_S,
    SegmentReport,
    accepted_mask,
    segment_select,
)
from .validation import check_bounds, check_vector3

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TranslationBounds:
    """Componentwise box constraint on the lever arm [m]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = check_bounds(self.lower, self.upper, "translation bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def around(cls, center, margin: float = 0.3) -> "TranslationBounds":
        c = check_vector3(center, "center")
        return cls(c - margin, c + margin)


@dataclass
class PairedSignals:
    """Two streams resampled onto one uniform grid (struct-of-arrays)."""

    t_ns: np.ndarray
    dt: float
    omega_b: np.ndarray
    omega_i: np.ndarray
    alpha_b: np.ndarray  # d(omega_b)/dt
    accel_b: np.ndarray
    accel_i: np.ndarray
    frame_b: str
    frame_i: str

    def __len__(self) -> int:
        return len(self.t_ns)


@dataclass
class SignalCalibConfig:
    grid_rate_hz: float = 100.0
    window_s: float = DEFAULT_WINDOW_S
    obs_threshold: float = DEFAULT_THRESHOLD
    gate_sigma: np.ndarray | None = None  # 3x3 noise covariance for the gate
    weight_mode: str = "uniform"  # "uniform" | "rate"
    smooth_window: int = 5
    eq_block_s: float = 0.25  # equation averaging span [s]
    estimate_offset: bool = True  # absorb a shared constant accel residual
    offset_bound: float = 2.0  # [m/s^2]
    bounds_margin: float = 0.3  # [m] box half-width around t_init
    time_offset_search: bool = False


@dataclass
class ImuExtrinsicsEstimate:
    """Result of the signal-matching stage.

    ``transform`` is the pose of the second sensor in the first sensor's
    frame (maps sensor coordinates into base coordinates).
    """

    transform: RigidTransform
    rotation_residual_rms: float  # [rad/s]
    translation_residual_rms: float  # [m/s^2]
    n_samples_used: int
    segment_reports: list[SegmentReport] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


def estimate_time_offset(a: ImuSeries, b: ImuSeries, config: SignalCalibConfig) -> float:
    """Extension point for an inter-stream time-offset search.

    Streams are assumed hardware-synchronized (offset below a few
    milliseconds), so the search is intentionally not implemented; a
    cross-correlation grid search can be plugged in here.
    """
    if config.time_offset_search:
        logger.warning("time_offset_search requested but not implemented; assuming 0")
    return 0.0


def resample_align(a: ImuSeries, b: ImuSeries, rate_hz: float = 100.0) -> PairedSignals:
    """Linearly interpolate both streams onto a shared uniform grid.

    The grid covers the overlap of the two spans; angular acceleration of the
    first stream is attached via :func:`angular_accel`.

    Raises NoOverlap when the common span is shorter than 1 s.
    """
    t0 = max(int(a.t_ns[0]), int(b.t_ns[0]))
    t1 = min(int(a.t_ns[-1]), int(b.t_ns[-1]))
    if t1 - t0 < 1_000_000_000:
        raise NoOverlap(f"streams overlap for {(t1 - t0) * 1e-9:.3f} s (< 1 s)")
    step_ns = int(round(1e9 / rate_hz))
    n = (t1 - t0) // step_ns + 1
    grid = t0 + step_ns * np.arange(n, dtype=np.int64)
    dt = step_ns * 1e-9

    def interp(series: ImuSeries, values: np.ndarray) -> np.ndarray:
        ts = (series.t_ns - t0) * 1e-9
        tq = (grid - t0) * 1e-9
        return np.column_stack([np.interp(tq, ts, values[:, k]) for k in range(3)])

    omega_b = interp(a, a.omega)
    accel_b = interp(a, a.accel)
    omega_i = interp(b, b.omega)
    accel_i = interp(b, b.accel)
    alpha_b = angular_accel(omega_b, dt)
    return PairedSignals(grid, dt, omega_b, omega_i, alpha_b, accel_b, accel_i, a.frame, b.frame)


def angular_accel(omega, dt: float, smooth_window: int = 5) -> np.ndarray:
    """Differentiate a uniformly sampled rate series.

    Central differences after zero-phase moving-average smoothing
    (reflect-padded), one-sided differences at the ends. Needs >= 3 samples.
    """
    w = np.asarray(omega, dtype=float)
    if w.ndim != 2 or w.shape[1] != 3:
        raise ValueError(f"omega must have shape (N, 3), got {w.shape}")
    if len(w) < 3:
        raise ValueError("angular_accel needs at least 3 samples")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if smooth_window > 1:
        half = smooth_window // 2
        padded = np.pad(w, ((half, smooth_window - 1 - half), (0, 0)), mode="reflect")
        csum = np.vstack([np.zeros(3), np.cumsum(padded, axis=0)])
        smoothed = (csum[smooth_window:] - csum[:-smooth_window]) / smooth_window
    else:
        smoothed = w
    deriv = np.empty_like(smoothed)
    deriv[1:-1] = (smoothed[2:] - smoothed[:-2]) / (2.0 * dt)
    deriv[0] = (smoothed[1] - smoothed[0]) / dt
    deriv[-1] = (smoothed[-1] - smoothed[-2]) / dt
    return deriv


def estimate_rotation(omega_b, omega_i, weights=None) -> np.ndarray:
    """Mounting rotation R with R omega_b ~ omega_i (base coords -> sensor coords)."""
    return kabsch_rotation(omega_b, omega_i, weights)


def rotation_residual_rms(r_star, omega_b, omega_i) -> float:
    resid = omega_b @ np.asarray(r_star).T - omega_i
    return float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))


# ---------------------------------------------------------------------------
# bounded least squares
# ---------------------------------------------------------------------------


def _equation_weights(sigma, m: int) -> np.ndarray:
    """Per-equation weights 1/variance from the residual covariance spec."""
    if sigma is None:
        return np.ones(m)
    s = np.asarray(sigma, dtype=float)
    if s.ndim == 0:
        if s <= 0:
            raise ValueError("sigma must be positive")
        return np.full(m, 1.0 / float(s))
    if s.shape == (m,):
        if np.any(s <= 0):
            raise ValueError("sigma entries must be positive")
        return 1.0 / s
    raise ValueError(f"sigma must be scalar or ({m},), got {s.shape}")


def bvls_solve(
    a,
    b,
    sigma=None,
    bounds: TranslationBounds | tuple = None,
    x0=None,
    max_iterations: int = 100,
    step_tol: float = 1e-10,
    allow_rank_deficient: bool = False,
) -> np.ndarray:
    """Box-bounded weighted least squares by projected Gauss-Newton steps.

    Minimizes ``||a x - b||^2`` weighted by ``1/sigma`` subject to
    ``lower <= x <= upper``. Steps solve the free-variable normal equations
    and are clipped hard into the box; variables pinned at a bound are freed
    when their gradient points inward. Converges when the step norm drops
    below ``step_tol`` or after ``max_iterations``.

    Raises
    ------
    IllConditioned
        When the unconstrained normal matrix has condition number above 1e12
        while no bound is active (unless ``allow_rank_deficient``, in which
        case unobservable directions stay at ``x0``).
    ValueError
        If ``x0`` violates the bounds.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    if a.ndim != 2 or len(a) != len(b):
        raise ValueError("a must be (M, k) with matching b of length M")
    k = a.shape[1]
    if isinstance(bounds, TranslationBounds):
        lo, hi = bounds.lower, bounds.upper
    elif bounds is not None:
        lo, hi = check_bounds(bounds[0], bounds[1])
    else:
        lo = np.full(k, -np.inf)
        hi = np.full(k, np.inf)
    if lo.shape != (k,):
        raise ValueError(f"bounds must have {k} components")
    x = np.zeros(k) if x0 is None else np.asarray(x0, dtype=float).copy()
    if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
        raise ValueError("x0 violates the bounds")

    w = _equation_weights(sigma, len(b))
    sw = np.sqrt(w)
    aw = a * sw[:, None]
    bw = b * sw
    normal = aw.T @ aw
    rhs = aw.T @ bw

    eps = 1e-12
    for _ in range(max_iterations):
        grad = normal @ x - rhs
        at_lower = x <= lo + eps
        at_upper = x >= hi - eps
        active = (at_lower & (grad > 0)) | (at_upper & (grad < 0))
        free = ~active
        if not np.any(free):
            break
        nf = normal[np.ix_(free, free)]
        gf = grad[free]
        step_f = np.linalg.lstsq(nf, -gf, rcond=1e-12)[0]
        x_new = x.copy()
        x_new[free] = x[free] + step_f
        np.clip(x_new, lo, hi, out=x_new)
        delta = float(np.linalg.norm(x_new - x))
        x = x_new
        if delta < step_tol:
            break

    if not allow_rank_deficient:
        touching = (x <= lo + eps) | (x >= hi - eps)
        if not np.any(touching):
            sv = np.linalg.svd(normal, compute_uv=False)
            if sv[-1] <= 0 or sv[0] / max(sv[-1], 1e-300) > 1e12:
                raise IllConditioned(
                    "normal matrix condition number exceeds 1e12 with no active bound"
                )
    return x


# ---------------------------------------------------------------------------
# translation from the lever-arm acceleration terms
# ---------------------------------------------------------------------------


def _skew_many(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def lever_arm_system(omega_b, alpha_b, accel_b, accel_i, r_star):
    """Per-sample lever-arm equations A_i t = B_i.

    ``A_i = [omega]_x^2 + [alpha]_x`` and ``B_i = R*^-1 accel_i - accel_b``,
    both expressed in the base sensor frame.
    """
    sk_w = _skew_many(np.asarray(omega_b, dtype=float))
    sk_a = _skew_many(np.asarray(alpha_b, dtype=float))
    a_blocks = sk_w @ sk_w + sk_a
    b_blocks = np.asarray(accel_i, dtype=float) @ np.asarray(r_star, dtype=float) - np.asarray(
        accel_b, dtype=float
    )
    return a_blocks, b_blocks


def _block_average(a_blocks, b_blocks, block_ids):
    """Average the per-sample equations within consecutive-sample blocks.

    Averaging before stacking tames the white differentiation noise in the
    A side, which would otherwise bias the solution toward zero
    (errors-in-variables attenuation).
    """
    uniq, inverse = np.unique(block_ids, return_inverse=True)
    n = len(uniq)
    a_sum = np.zeros((n, 3, 3))
    b_sum = np.zeros((n, 3))
    np.add.at(a_sum, inverse, a_blocks)
    np.add.at(b_sum, inverse, b_blocks)
    counts = np.bincount(inverse, minlength=n).astype(float)
    return a_sum / counts[:, None, None], b_sum / counts[:, None]


def estimate_translation(
    omega_b,
    alpha_b,
    accel_b,
    accel_i,
    r_star,
    bounds: TranslationBounds,
    t_init,
    config: SignalCalibConfig | None = None,
    block_ids=None,
) -> tuple[np.ndarray, dict]:
    """Lever arm of the second sensor in the base sensor frame [m].

    Stacks the per-sample lever-arm equations (optionally block-averaged and
    augmented with a shared constant acceleration offset that absorbs
    residual gravity-compensation error) and solves the box-bounded least
    squares problem around ``t_init``.

    Raises IllConditioned when the motion contains no rotational excitation
    at all. With partial excitation (e.g. a single constant spin axis) the
    unobservable directions stay at ``t_init``.
    """
    config = config or SignalCalibConfig()
    t_init = check_vector3(t_init, "t_init")
    a_blocks, b_blocks = lever_arm_system(omega_b, alpha_b, accel_b, accel_i, r_star)
    if block_ids is not None:
        a_blocks, b_blocks = _block_average(a_blocks, b_blocks, np.asarray(block_ids))

    a_stack = a_blocks.reshape(-1, 3)
    b_stack = b_blocks.reshape(-1)
    sv = np.linalg.svd(a_stack, compute_uv=False)
    if sv[0] < 1e-9:
        raise IllConditioned("no rotational excitation: lever arm unobservable")
    rank = int(np.sum(sv > sv[0] * 1e-8))

    diagnostics: dict = {"observable_rank": rank, "n_equations": len(b_stack)}

    if rank < 3:
        # solve only along the observable directions, pin the rest at t_init
        _, _, vt = np.linalg.svd(a_stack, full_matrices=False)
        v_obs = vt[:rank].T
        y = np.linalg.lstsq(a_stack @ v_obs, b_stack - a_stack @ t_init, rcond=None)[0]
        t = np.clip(t_init + v_obs @ y, bounds.lower, bounds.upper)
        resid = a_stack @ t - b_stack
        diagnostics["translation_residual_rms"] = float(np.sqrt(np.mean(resid**2)))
        diagnostics["offset"] = None
        return t, diagnostics

    if config.estimate_offset:
        n_rows = len(a_blocks)
        eye = np.broadcast_to(np.eye(3), (n_rows, 3, 3)).reshape(-1, 3)
        a_full = np.hstack([a_stack, eye])
        ridge = math.sqrt(1e-4 * n_rows)
        reg = np.zeros((3, 6))
        reg[:, 3:] = ridge * np.eye(3)
        a_full = np.vstack([a_full, reg])
        b_full = np.concatenate([b_stack, np.zeros(3)])
        lo = np.concatenate([bounds.lower, -config.offset_bound * np.ones(3)])
        hi = np.concatenate([bounds.upper, config.offset_bound * np.ones(3)])
        x0 = np.concatenate([t_init, np.zeros(3)])
        x = bvls_solve(a_full, b_full, None, (lo, hi), x0)
        t, offset = x[:3], x[3:]
        resid = a_stack @ t + np.tile(offset, len(a_blocks)) - b_stack
        diagnostics["offset"] = offset
    else:
        t = bvls_solve(a_stack, b_stack, None, bounds, t_init)
        resid = a_stack @ t - b_stack
        diagnostics["offset"] = None
    diagnostics["translation_residual_rms"] = float(np.sqrt(np.mean(resid**2)))
    return t, diagnostics


# ---------------------------------------------------------------------------
# composite
# ---------------------------------------------------------------------------


def calibrate_imu_pair(
    a: ImuSeries,
    b: ImuSeries,
    bounds: TranslationBounds | None = None,
    t_init=(0.0, 0.0, 0.0),
    config: SignalCalibConfig | None = None,
    translation_series: tuple[ImuSeries, ImuSeries] | None = None,
) -> ImuExtrinsicsEstimate:
    """Extrinsics of sensor ``b`` relative to sensor ``a`` from signal matching.

    Both series must already be bias-compensated and gravity-free. The
    streams are resampled onto a common grid, windows are gated by the
    excitation criterion, the rotation is solved over the accepted samples,
    and the lever arm over the same samples.

    ``translation_series`` optionally supplies a bias-compensated
    specific-force pair (gravity retained) for the lever-arm stage: the
    cross-sensor difference then cancels gravity through the estimated
    rotation instead of through the per-stream orientation estimates, which
    keeps orientation-filter error out of the translation.

    Raises InsufficientExcitation when no window passes the gate.
    """
    config = config or SignalCalibConfig()
    t_init = check_vector3(t_init, "t_init")
    if bounds is None:
        bounds = TranslationBounds.around(t_init, config.bounds_margin)
    estimate_time_offset(a, b, config)

    ps = resample_align(a, b, config.grid_rate_hz)
    accel_b, accel_i = ps.accel_b, ps.accel_i
    if translation_series is not None:
        ps_t = resample_align(*translation_series, config.grid_rate_hz)
        if len(ps_t) != len(ps) or ps_t.t_ns[0] != ps.t_ns[0]:
            raise ValueError("translation_series must share the primary time base")
        accel_b, accel_i = ps_t.accel_b, ps_t.accel_i
    reports = segment_select(
        ps.t_ns, ps.omega_b, config.window_s, config.obs_threshold, config.gate_sigma
    )
    mask = accepted_mask(reports, len(ps))
    if not mask.any():
        raise InsufficientExcitation(
            f"none of {len(reports)} windows passed the excitation gate"
        )

    weights = None
    if config.weight_mode == "rate":
        mag = np.linalg.norm(ps.omega_b[mask], axis=1)
        weights = mag / max(mag.mean(), 1e-12)
    elif config.weight_mode != "uniform":
        raise ValueError(f"unknown weight_mode {config.weight_mode!r}")

    r_star = estimate_rotation(ps.omega_b[mask], ps.omega_i[mask], weights)
    rot_rms = rotation_residual_rms(r_star, ps.omega_b[mask], ps.omega_i[mask])

    block = max(1, int(round(config.eq_block_s * config.grid_rate_hz)))
    block_ids = (np.nonzero(mask)[0] // block).astype(np.int64)
    t_star, tdiag = estimate_translation(
        ps.omega_b[mask],
        ps.alpha_b[mask],
        accel_b[mask],
        accel_i[mask],
        r_star,
        bounds,
        t_init,
        config,
        block_ids=block_ids,
    )

    # pose of sensor b in sensor a's frame: x_a = R*^T x_b + t
    transform = RigidTransform(r_star.T, t_star, b.frame, a.frame)
    return ImuExtrinsicsEstimate(
        transform=transform,
        rotation_residual_rms=rot_rms,
        translation_residual_rms=float(tdiag["translation_residual_rms"]),
        n_samples_used=int(mask.sum()),
        segment_reports=reports,
        diagnostics=tdiag,
    )
