"""Frame-tagged rigid-body geometry.

Conventions used throughout the library:

* Quaternions are scalar-first ``[w, x, y, z]`` with canonical sign ``w >= 0``.
  ``R(q) v`` rotates a vector; for an orientation quaternion ``q_AB`` (frame B
  expressed in frame A), ``R(q_AB)`` maps B coordinates into A coordinates.
* ``RigidTransform`` maps coordinates from :attr:`from_frame` into
  :attr:`to_frame`: ``x_to = R @ x_from + t``.
* Closed-form rotation solvers: weighted Kabsch (SVD) and the symmetric
  4x4 eigenvalue method, which must agree on every non-degenerate input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, FrameMismatch
from .validation import (
    as_float_array,
    check_points,
    check_quaternion,
    check_rotation_matrix,
    check_vector3,
)

BASE_FRAME = "B"
WORLD_FRAME = "W"

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def skew(v) -> np.ndarray:
    """Skew-symmetric matrix [v]x with [v]x w = v x w."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


# ---------------------------------------------------------------------------
# quaternions
# ---------------------------------------------------------------------------


def quat_normalize(q) -> np.ndarray:
    """Normalize and apply the canonical sign (w >= 0; ties broken on x, y, z)."""
    arr = np.asarray(q, dtype=float)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero quaternion")
    out = arr / norm
    for c in out:
        if c > 0.0:
            break
        if c < 0.0:
            out = -out
            break
    return out


def quat_conjugate(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([w, -x, -y, -z])


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a (x) b, equal to composing the rotations R(a) R(b)."""
    a = check_quaternion(a, "a")
    b = check_quaternion(b, "b")
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return quat_normalize(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = check_vector3(axis, "axis")
    norm = float(np.linalg.norm(axis))
    if norm == 0.0:
        raise ValueError("axis must be nonzero")
    half = 0.5 * angle
    return quat_normalize(np.concatenate(([math.cos(half)], math.sin(half) * axis / norm)))


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = check_quaternion(q, "q")
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def quat_from_matrix(r) -> np.ndarray:
    """Shepperd's method, branch chosen on the largest diagonal term."""
    m = check_rotation_matrix(r, "r", tol=1e-6)
    trace = m[0, 0] + m[1, 1] + m[2, 2]
    if trace > 0.0:
        s = math.sqrt(trace + 1.0) * 2.0
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector v by quaternion q (equals quat_to_matrix(q) @ v)."""
    w = q[0]
    u = np.asarray(q[1:4], dtype=float)
    v = np.asarray(v, dtype=float)
    c = np.cross(u, v)
    return v + 2.0 * (w * c + np.cross(u, c))


def quat_rotate_many(quats, vectors) -> np.ndarray:
    """Rotate vectors by a batch of quaternions.

    ``quats`` is (N, 4) scalar-first; ``vectors`` is (3,) broadcast to all
    quaternions or (N, 3) paired row-by-row.
    """
    qs = np.asarray(quats, dtype=float)
    vs = np.asarray(vectors, dtype=float)
    if vs.ndim == 1:
        vs = np.broadcast_to(vs, (len(qs), 3))
    w = qs[:, :1]
    u = qs[:, 1:]
    c = np.cross(u, vs)
    return vs + 2.0 * (w * c + np.cross(u, c))


def quat_propagate(q_prev, omega, dt: float) -> np.ndarray:
    """Advance an orientation quaternion by a body-rate increment.

    Uses the exact axis-angle exponential ``q <- q (x) exp(omega dt / 2)``
    with a series expansion of sin(x)/x near zero rate, so the zero-rotation
    limit is smooth.

    Parameters
    ----------
    q_prev : array-like, shape (4,)
        Orientation before the step, scalar first.
    omega : array-like, shape (3,)
        Angular rate in the rotating (body) frame [rad/s].
    dt : float
        Step length [s], must be positive.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    q_prev = check_quaternion(q_prev, "q_prev")
    omega = check_vector3(omega, "omega")
    theta = np.linalg.norm(omega) * dt
    half = 0.5 * theta
    if theta < 1e-8:
        # sin(theta/2)/theta -> 1/2 - theta^2/48
        scale = (0.5 - theta * theta / 48.0) * dt
        dq = np.concatenate(([1.0 - half * half / 2.0], omega * scale))
    else:
        dq = np.concatenate(([math.cos(half)], omega * (math.sin(half) / (theta / dt))))
    return quat_multiply(q_prev, quat_normalize(dq))


def quat_propagate_matrix_form(q_prev, omega, dt: float) -> np.ndarray:
    """Rate-matrix form of the propagation step.

    Kept as a cross-check for :func:`quat_propagate`; the axis-angle closed
    form is the production path (better conditioned near zero rate).
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    q_prev = check_quaternion(q_prev, "q_prev")
    omega = check_vector3(omega, "omega")
    wx, wy, wz = omega
    # Right-multiplication matrix of a pure-vector quaternion, scalar first.
    big_omega = np.array(
        [
            [0.0, -wx, -wy, -wz],
            [wx, 0.0, wz, -wy],
            [wy, -wz, 0.0, wx],
            [wz, wy, -wx, 0.0],
        ]
    )
    norm = float(np.linalg.norm(omega))
    half = 0.5 * dt * norm
    if norm < 1e-12:
        return quat_normalize(q_prev)
    transition = math.cos(half) * np.eye(4) + (math.sin(half) / norm) * big_omega
    return quat_normalize(transition @ q_prev)


def quat_angle(a, b) -> float:
    """Geodesic angle [rad] between two orientation quaternions."""
    qa = quat_normalize(a)
    qb = quat_normalize(b)
    if float(np.dot(qa, qb)) < 0.0:
        qb = -qb
    # atan2 form stays accurate near zero where acos(dot) cannot resolve
    return 4.0 * math.atan2(float(np.linalg.norm(qa - qb)), float(np.linalg.norm(qa + qb)))


# ---------------------------------------------------------------------------
# rotation matrices
# ---------------------------------------------------------------------------


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_zyx(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rz(yaw) Ry(pitch) Rx(roll), mapping body coordinates to the parent frame."""
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def euler_zyx(r) -> tuple[float, float, float]:
    """(roll, pitch, yaw) of a rotation built as Rz Ry Rx."""
    m = np.asarray(r, dtype=float)
    pitch = math.asin(max(-1.0, min(1.0, -m[2, 0])))
    roll = math.atan2(m[2, 1], m[2, 2])
    yaw = math.atan2(m[1, 0], m[0, 0])
    return roll, pitch, yaw


def rotvec_to_matrix(v) -> np.ndarray:
    """Rodrigues formula: rotation matrix of a rotation vector (axis * angle)."""
    v = np.asarray(v, dtype=float)
    angle = float(np.linalg.norm(v))
    if angle < 1e-12:
        return np.eye(3) + skew(v)
    k = skew(v / angle)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def rotation_angle(r) -> float:
    """Rotation angle [rad] of a single rotation matrix."""
    m = np.asarray(r, dtype=float)
    c = 0.5 * (np.trace(m) - 1.0)
    s_vec = 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    # atan2 resolves small angles that acos(trace) cannot
    return math.atan2(float(np.linalg.norm(s_vec)), c)


def geodesic_angle(r_a, r_b) -> float:
    """Geodesic distance [rad] between two rotation matrices."""
    return rotation_angle(np.asarray(r_a).T @ np.asarray(r_b))


# ---------------------------------------------------------------------------
# closed-form rotation solvers
# ---------------------------------------------------------------------------


def _pair_weights(weights, n: int) -> np.ndarray:
    """Collapse per-pair weighting input to positive scalars.

    Accepts None (uniform), an (N,) array of scalars, or an (N, 3, 3) stack of
    covariances which are collapsed to tr(inv(S))/3.
    """
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape == (n,):
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        return w
    if w.shape == (n, 3, 3):
        return np.array([np.trace(np.linalg.inv(s)) / 3.0 for s in w])
    raise ValueError(f"weights must have shape ({n},) or ({n}, 3, 3), got {w.shape}")


def _cross_gain(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted gain matrix sum_i w_i a_i b_i^T accumulated in input order."""
    return np.einsum("i,ij,ik->jk", w, a, b)


def _check_alignment_rank(gain: np.ndarray, rel_tol: float = 1e-9) -> None:
    s = np.linalg.svd(gain, compute_uv=False)
    if s[0] <= 0.0 or s[1] <= s[0] * rel_tol:
        raise DegenerateInput(
            "direction pairs do not constrain a rotation "
            f"(singular values {s[0]:.3e}, {s[1]:.3e}, {s[2]:.3e})"
        )


def kabsch_rotation(a, b, weights=None) -> np.ndarray:
    """Rotation R minimizing the weighted sum of ||R a_i - b_i||^2.

    Parameters
    ----------
    a, b : array-like, shape (N, 3)
        Paired vectors; R maps the a-side onto the b-side.
    weights : optional
        Per-pair scalars or 3x3 covariances (collapsed to tr(inv)/3).

    Returns
    -------
    ndarray, shape (3, 3)
        Proper rotation (det +1; reflections are rejected).

    Raises
    ------
    DegenerateInput
        If the weighted cross-gain matrix has numerical rank < 2
        (e.g. all input vectors collinear).
    """
    a = check_points(a, "a")
    b = check_points(b, "b")
    if a.shape != b.shape:
        raise ValueError("a and b must have the same shape")
    if len(a) < 2:
        raise DegenerateInput("at least 2 pairs are required")
    w = _pair_weights(weights, len(a))
    gain = _cross_gain(a, b, w)
    _check_alignment_rank(gain)
    # maximize tr(R H) with H = sum w a b^T:  R = V diag(1,1,det) U^T
    u, _, vt = np.linalg.svd(gain)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    return vt.T @ np.diag([1.0, 1.0, d]) @ u.T


def jacobi_eigh(a, tol: float = 1e-12, max_sweeps: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a small symmetric matrix by cyclic Jacobi rotations.

    Deterministic across platforms (no LAPACK); intended for the 4x4 gain
    matrix of the quaternion attitude solver. Returns eigenvalues in
    ascending order with matching eigenvector columns.
    """
    m = np.array(a, dtype=float)
    n = m.shape[0]
    if m.shape != (n, n) or np.linalg.norm(m - m.T) > 1e-9 * max(1.0, np.abs(m).max()):
        raise ValueError("jacobi_eigh requires a symmetric square matrix")
    v = np.eye(n)
    scale = max(1.0, np.abs(m).max())
    for _ in range(max_sweeps):
        off = math.sqrt(sum(m[i, j] ** 2 for i in range(n) for j in range(i + 1, n)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(m[p, q]) <= 1e-300:
                    continue
                theta = 0.5 * (m[q, q] - m[p, p]) / m[p, q]
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                m = rot.T @ m @ rot
                v = v @ rot
    eigvals = np.diag(m).copy()
    order = np.argsort(eigvals, kind="stable")
    return eigvals[order], v[:, order]


def davenport_rotation(a, b, weights=None) -> np.ndarray:
    """Attitude quaternion q with R(q) a_i ~ b_i from unit direction pairs.

    Builds the symmetric 4x4 gain matrix from the direction pairs and takes
    the unit eigenvector of its largest eigenvalue. Agrees with
    :func:`kabsch_rotation` on every non-degenerate noiseless instance.
    """
    a = check_points(a, "a")
    b = check_points(b, "b")
    if a.shape != b.shape:
        raise ValueError("a and b must have the same shape")
    if len(a) < 2:
        raise DegenerateInput("at least 2 direction pairs are required")
    w = _pair_weights(weights, len(a))
    gain = _cross_gain(a, b, w)  # sum w a b^T
    _check_alignment_rank(gain)
    bmat = gain.T  # sum w b a^T
    sigma = np.trace(bmat)
    s = bmat + bmat.T
    z = np.einsum("i,ij->j", w, np.cross(a, b))
    k = np.empty((4, 4))
    k[:3, :3] = s - sigma * np.eye(3)
    k[:3, 3] = z
    k[3, :3] = z
    k[3, 3] = sigma
    _, vecs = jacobi_eigh(k)
    principal = vecs[:, -1]  # [x, y, z, w]
    return quat_normalize([principal[3], principal[0], principal[1], principal[2]])


# ---------------------------------------------------------------------------
# rigid transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element with frame tags: ``x_to = rotation @ x_from + translation``."""

    rotation: np.ndarray
    translation: np.ndarray
    from_frame: str
    to_frame: str

    def __post_init__(self):
        r = check_rotation_matrix(self.rotation, "rotation")
        t = check_vector3(self.translation, "translation")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if not self.from_frame or not self.to_frame:
            raise ValueError("frame tags must be non-empty")

    @classmethod
    def identity(cls, frame: str, to_frame: str | None = None) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), frame, to_frame if to_frame is not None else frame)

    @classmethod
    def from_matrix(cls, m, from_frame: str, to_frame: str) -> "RigidTransform":
        m = as_float_array(m, "matrix")
        if m.shape != (4, 4):
            raise ValueError(f"homogeneous matrix must be 4x4, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3], from_frame, to_frame)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def quaternion(self) -> np.ndarray:
        return quat_from_matrix(self.rotation)

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """self o inner: apply ``inner`` first. Frame tags must chain."""
        if inner.to_frame != self.from_frame:
            raise FrameMismatch(
                f"cannot compose: inner maps to {inner.to_frame!r} "
                f"but outer expects {self.from_frame!r}"
            )
        return RigidTransform(
            self.rotation @ inner.rotation,
            self.rotation @ inner.translation + self.translation,
            inner.from_frame,
            self.to_frame,
        )

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(
            self.rotation.T, -(self.rotation.T @ self.translation), self.to_frame, self.from_frame
        )

    def apply(self, points) -> np.ndarray:
        """Map one (3,) point or an (N, 3) batch into the target frame."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return self.rotation @ pts + self.translation
        return pts @ self.rotation.T + self.translation

    def rotate(self, vectors) -> np.ndarray:
        """Rotate direction vectors (no translation)."""
        vecs = np.asarray(vectors, dtype=float)
        if vecs.ndim == 1:
            return self.rotation @ vecs
        return vecs @ self.rotation.T
