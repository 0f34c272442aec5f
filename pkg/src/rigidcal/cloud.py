"""Point-cloud half of the calibration pipeline.

Box filtering, point-to-plane ICP seeded by the inertial estimate, line and
plane feature extraction with closeness matching, attitude refinement from
matched line directions, and plane-based verification of the final
extrinsics.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import DegenerateInput, NoPlanes, TooSparse
from .geometry import (
    RigidTransform,
    davenport_rotation,
    quat_to_matrix,
    rotvec_to_matrix,
)
from .validation import check_points, check_vector3

logger = logging.getLogger(__name__)

# Closeness gates: line matching for refinement, plane matching for
# verification.
LINE_ANGLE_GATE = math.radians(5.0)
LINE_DIST_GATE = 0.5
PLANE_ANGLE_GATE = math.radians(1.0)
PLANE_DIST_GATE = 0.3

DEFAULT_BOX_MIN = np.array([0.0, -10.0, -10.0])
DEFAULT_BOX_MAX = np.array([50.0, 10.0, 10.0])

_PARALLEL_EPS = 1e-6


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------


@dataclass
class PointCloud:
    """Points in one sensor frame. Per-point attributes are not modeled."""

    frame: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite coordinates")
        self.points = pts

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, t: RigidTransform) -> "PointCloud":
        return PointCloud(frame=t.to_frame, points=t.apply(self.points))


def canonical_direction(v) -> np.ndarray:
    """Unit vector with its first nonzero component positive."""
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("zero direction")
    u = v / norm
    for c in u:
        if c > 1e-12:
            return u
        if c < -1e-12:
            return -u
    return u


@dataclass
class Feature:
    """A fitted line or plane: unit direction/normal plus a center point."""

    kind: str  # "line" | "plane"
    direction: np.ndarray
    center: np.ndarray
    inlier_count: int
    rms_fit: float

    def __post_init__(self):
        if self.kind not in ("line", "plane"):
            raise ValueError(f"kind must be 'line' or 'plane', got {self.kind!r}")
        self.direction = canonical_direction(check_vector3(self.direction, "direction"))
        self.center = check_vector3(self.center, "center")
        if self.rms_fit < 0:
            raise ValueError("rms_fit must be non-negative")

    def transformed(self, t: RigidTransform) -> "Feature":
        return Feature(
            kind=self.kind,
            direction=canonical_direction(t.rotate(self.direction)),
            center=t.apply(self.center),
            inlier_count=self.inlier_count,
            rms_fit=self.rms_fit,
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "direction": self.direction.tolist(),
            "center": self.center.tolist(),
            "inlier_count": int(self.inlier_count),
            "rms_fit": float(self.rms_fit),
        }


@dataclass
class MatchPair:
    """Two same-kind features considered a close match."""

    a: Feature
    b: Feature
    alpha: float  # angular gap [rad], in [0, pi/2]
    delta: float  # spatial gap [m]

    def __post_init__(self):
        if self.a.kind != self.b.kind:
            raise ValueError("matched features must share a kind")


@dataclass
class FeatureConfig:
    """Knobs of the feature extractor."""

    k_neighbors: int = 10
    line_quantile: float = 0.10  # top fraction by edge-likeness
    plane_quantile: float = 0.40  # bottom fraction by edge-likeness
    inlier_tol: float = 0.05  # [m]
    min_inliers: int = 30
    max_iterations: int = 500
    max_features: int = 8
    cluster_tol: float = 0.5  # [m]
    cluster_min: int = 30
    line_anisotropy_max: float = 0.2  # lambda2/lambda3 ceiling for a line fit
    plane_spread_min: float = 0.02  # lambda2/lambda3 floor for a plane fit


@dataclass
class IcpConfig:
    voxel_size: float = 0.2  # [m]
    max_corr_dist: float = 1.0  # [m]
    max_iterations: int = 50
    rel_tol: float = 1e-6  # [m] change in mean residual
    min_points: int = 100
    k_normals: int = 10


@dataclass
class IcpResult:
    transform: RigidTransform
    rms: float
    iterations: int
    residual_history: list[float] = field(default_factory=list)


# ---------------------------------------------------------------------------
# filtering and neighborhoods
# ---------------------------------------------------------------------------


def box_filter(cloud: PointCloud, box_min=DEFAULT_BOX_MIN, box_max=DEFAULT_BOX_MAX) -> PointCloud:
    """Keep points inside the axis-aligned box, preserving order.

    An empty result is flagged with a warning but is not an error.
    """
    lo = check_vector3(box_min, "box_min")
    hi = check_vector3(box_max, "box_max")
    if np.any(lo > hi):
        raise ValueError("box_min exceeds box_max componentwise")
    pts = cloud.points
    mask = np.all((pts >= lo) & (pts <= hi), axis=1)
    out = PointCloud(frame=cloud.frame, points=pts[mask])
    if len(out) == 0:
        logger.warning("box_filter: no points of %s inside the box", cloud.frame)
    return out


def voxel_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """Centroid per occupied voxel, ordered by voxel index (deterministic)."""
    if voxel <= 0:
        return points.copy()
    keys = np.floor(points / voxel).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, inverse, points)
    counts = np.bincount(inverse, minlength=len(uniq)).astype(float)
    return sums / counts[:, None]


def neighborhood_shape(points: np.ndarray, k: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Local covariance eigenvalues (ascending) and normals per point."""
    n = len(points)
    k_eff = min(k + 1, n)
    tree = cKDTree(points)
    _, idx = tree.query(points, k=k_eff)
    neigh = points[idx]  # (n, k_eff, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nkj,nkl->njl", centered, centered) / k_eff
    eigvals, eigvecs = np.linalg.eigh(cov)
    normals = eigvecs[:, :, 0]
    return eigvals, normals


def edge_likeness(eigvals: np.ndarray) -> np.ndarray:
    """Score in [0, 1]: high where the neighborhood is elongated (edge/pole),
    near zero on smooth planar patches."""
    lam = np.maximum(eigvals, 0.0)
    total = lam.sum(axis=1) + 1e-30
    return (lam[:, 2] - lam[:, 1]) / total


def euclidean_clusters(points: np.ndarray, tol: float, min_size: int) -> np.ndarray:
    """Mask of points belonging to clusters of at least ``min_size``."""
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=bool)
    tree = cKDTree(points)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros(n, dtype=bool)
    graph = sparse.coo_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)
    )
    _, labels = connected_components(graph, directed=False)
    counts = np.bincount(labels)
    return counts[labels] >= min_size


# ---------------------------------------------------------------------------
# ICP
# ---------------------------------------------------------------------------


def icp_align(
    src: PointCloud,
    dst: PointCloud,
    t_seed: RigidTransform,
    config: IcpConfig | None = None,
) -> IcpResult:
    """Point-to-plane ICP refining ``t_seed`` (mapping src frame to dst frame).

    Correspondences come from a k-d tree over the voxel-downsampled target
    with a maximum match distance; iterations stop when the mean residual
    changes by less than ``rel_tol`` or after ``max_iterations``. Steps that
    would increase the residual are rejected, so the accepted residual
    history is non-increasing.

    Raises
    ------
    TooSparse
        If either cloud has fewer than ``min_points`` points.
    NoConvergence
        If the residual oscillates without ever improving.
    FrameMismatch
        If the seed's frame tags do not match the clouds.
    """
    from .errors import FrameMismatch, NoConvergence

    config = config or IcpConfig()
    if len(src) < config.min_points or len(dst) < config.min_points:
        raise TooSparse(
            f"ICP needs at least {config.min_points} points per cloud "
            f"(got {len(src)} and {len(dst)})"
        )
    if t_seed.from_frame != src.frame or t_seed.to_frame != dst.frame:
        raise FrameMismatch(
            f"seed maps {t_seed.from_frame!r}->{t_seed.to_frame!r} but clouds are "
            f"{src.frame!r}->{dst.frame!r}"
        )

    src_pts = voxel_downsample(src.points, config.voxel_size)
    dst_pts = voxel_downsample(dst.points, config.voxel_size)
    _, normals = neighborhood_shape(dst_pts, config.k_normals)
    tree = cKDTree(dst_pts)

    r = t_seed.rotation.copy()
    t = t_seed.translation.copy()
    best = (r, t)
    best_rms = np.inf
    history: list[float] = []
    increases = 0
    iterations = 0

    for iterations in range(1, config.max_iterations + 1):
        moved = src_pts @ r.T + t
        dist, idx = tree.query(moved)
        mask = dist <= config.max_corr_dist
        if mask.sum() < 6:
            raise NoConvergence("too few correspondences within the match distance")
        p = moved[mask]
        q = dst_pts[idx[mask]]
        nrm = normals[idx[mask]]
        resid = np.einsum("ij,ij->i", p - q, nrm)
        rms = float(np.sqrt(np.mean(resid**2)))

        if rms < best_rms - 1e-15:
            best_rms = rms
            best = (r.copy(), t.copy())
            history.append(rms)
            increases = 0
        else:
            increases += 1
            if increases >= 2:
                if not np.isfinite(best_rms):
                    raise NoConvergence("residual oscillated without improving")
                break

        if len(history) >= 2 and abs(history[-2] - history[-1]) < config.rel_tol:
            break

        # linearized point-to-plane step: unknowns [rotvec, translation]
        jac = np.hstack([np.cross(p, nrm), nrm])
        h = jac.T @ jac
        g = jac.T @ resid
        try:
            x = np.linalg.solve(h, -g)
        except np.linalg.LinAlgError:
            x = np.linalg.lstsq(h, -g, rcond=None)[0]
        delta_r = rotvec_to_matrix(x[:3])
        r = delta_r @ r
        t = delta_r @ t + x[3:]

    r, t = best
    transform = RigidTransform(r, t, src.frame, dst.frame)
    return IcpResult(transform=transform, rms=best_rms, iterations=iterations, residual_history=history)


# ---------------------------------------------------------------------------
# feature extraction
# ---------------------------------------------------------------------------


def _prosac_prefix(pool_size: int, iteration: int, total: int, minimal: int) -> int:
    """Growing sampling prefix: early iterations draw from the best-ranked
    candidates, later ones from the whole pool."""
    frac = min(1.0, (iteration + 1) / (0.7 * total))
    return max(minimal * 3, int(math.ceil(pool_size * frac)))


def _ransac_model(pts, rng, config: FeatureConfig, kind: str):
    """Best line/plane by inlier count under prioritized random sampling.

    ``pts`` must be ordered best-candidate-first. Returns (inlier_mask, count)
    or None.
    """
    n = len(pts)
    minimal = 2 if kind == "line" else 3
    if n < max(minimal, config.min_inliers):
        return None
    best_count = 0
    best_mask = None
    needed = config.max_iterations
    it = 0
    while it < min(needed, config.max_iterations):
        prefix = min(n, _prosac_prefix(n, it, config.max_iterations, minimal))
        sel = rng.integers(0, prefix, size=minimal)
        sample = pts[sel]
        if kind == "line":
            d = sample[1] - sample[0]
            norm = np.linalg.norm(d)
            if norm < 1e-9:
                it += 1
                continue
            d /= norm
            rel = pts - sample[0]
            dist = np.linalg.norm(np.cross(rel, d), axis=1)
        else:
            nvec = np.cross(sample[1] - sample[0], sample[2] - sample[0])
            norm = np.linalg.norm(nvec)
            if norm < 1e-9:
                it += 1
                continue
            nvec /= norm
            dist = np.abs((pts - sample[0]) @ nvec)
        mask = dist <= config.inlier_tol
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            # adaptive stopping: enough iterations to hit an all-inlier sample
            w = count / n
            if w > 0:
                denom = math.log(max(1e-12, 1.0 - w**minimal))
                if denom < 0:
                    needed = min(needed, int(math.ceil(math.log(1e-3) / denom)))
        it += 1
    if best_mask is None or best_count < config.min_inliers:
        return None
    return best_mask, best_count


def _refit_feature(pts: np.ndarray, kind: str) -> tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    """Least-squares refit on inliers: (direction, center, rms, eigvals asc)."""
    center = pts.mean(axis=0)
    centered = pts - center
    cov = centered.T @ centered / len(pts)
    eigvals, eigvecs = np.linalg.eigh(cov)
    if kind == "line":
        direction = eigvecs[:, 2]
        dist = np.linalg.norm(np.cross(centered, direction), axis=1)
    else:
        direction = eigvecs[:, 0]
        dist = centered @ direction
    rms = float(np.sqrt(np.mean(dist**2)))
    return direction, center, rms, eigvals


def _shape_valid(eigvals: np.ndarray, kind: str, config: FeatureConfig) -> bool:
    lam = np.maximum(eigvals, 1e-30)
    ratio = lam[1] / lam[2]
    if kind == "line":
        return ratio <= config.line_anisotropy_max
    return ratio >= config.plane_spread_min


def _extract_kind(pts: np.ndarray, rng, kind: str, config: FeatureConfig) -> list[Feature]:
    pool = pts
    features: list[Feature] = []
    for _ in range(config.max_features):
        found = _ransac_model(pool, rng, config, kind)
        if found is None:
            break
        mask, _ = found
        inliers = pool[mask]
        direction, center, rms, eigvals = _refit_feature(inliers, kind)
        if _shape_valid(eigvals, kind, config):
            features.append(
                Feature(
                    kind=kind,
                    direction=direction,
                    center=center,
                    inlier_count=len(inliers),
                    rms_fit=rms,
                )
            )
        pool = pool[~mask]
        if len(pool) < config.min_inliers:
            break
    return features


def extract_features(
    cloud: PointCloud,
    config: FeatureConfig | None = None,
    seed: int = 0,
) -> tuple[list[Feature], list[Feature]]:
    """Fit line and plane features to a cloud.

    Points are clustered (isolated specks dropped), scored by the
    edge-likeness of their k-NN neighborhood, and split into a line-candidate
    pool (top quantile) and a plane-candidate pool (bottom quantile). Models
    are fitted by RANSAC with curvature-prioritized sampling; fits with fewer
    than ``min_inliers`` inliers or an implausible inlier shape are discarded.

    Returns (lines, planes); either list may be empty.
    """
    config = config or FeatureConfig()
    pts = cloud.points
    if len(pts) < 100:
        logger.warning("extract_features: cloud %s has %d (<100) points", cloud.frame, len(pts))
        return [], []
    keep = euclidean_clusters(pts, config.cluster_tol, config.cluster_min)
    if keep.sum() >= 100:
        pts = pts[keep]

    eigvals, _ = neighborhood_shape(pts, config.k_neighbors)
    scores = edge_likeness(eigvals)
    order = np.argsort(-scores, kind="stable")

    n = len(pts)
    n_line = max(config.min_inliers, int(round(config.line_quantile * n)))
    n_plane = max(config.min_inliers, int(round(config.plane_quantile * n)))
    line_pool = pts[order[:n_line]]  # best edge candidates first
    plane_pool = pts[order[::-1][:n_plane]]  # flattest candidates first

    rng = np.random.Generator(np.random.Philox(seed))
    lines = _extract_kind(line_pool, rng, "line", config)
    planes = _extract_kind(plane_pool, rng, "plane", config)
    return lines, planes


# ---------------------------------------------------------------------------
# feature matching and refinement
# ---------------------------------------------------------------------------


def _feature_gap(a: Feature, b: Feature, plane_normal_offset: bool = True) -> tuple[float, float]:
    """(alpha, delta): angular and spatial closeness of two same-kind features."""
    dot = abs(float(a.direction @ b.direction))
    alpha = math.acos(min(1.0, dot))
    cross = np.cross(a.direction, b.direction)
    cross_norm = float(np.linalg.norm(cross))
    diff = a.center - b.center
    if a.kind == "plane" and plane_normal_offset:
        delta = abs(float(a.direction @ diff))
    elif cross_norm < _PARALLEL_EPS:
        if a.kind == "line":
            delta = float(np.linalg.norm(np.cross(diff, a.direction)))
        else:
            delta = abs(float(a.direction @ diff))
    else:
        delta = abs(float(cross @ diff)) / cross_norm
    return alpha, delta


def match_features(
    a: list[Feature],
    b: list[Feature],
    tau_alpha: float,
    tau_delta: float,
    plane_normal_offset: bool = True,
) -> list[MatchPair]:
    """Greedy one-to-one matching of same-kind features in a common frame.

    Candidate pairs within both gates are sorted by (alpha, delta) and taken
    greedily, so each feature appears in at most one pair. Directions match
    up to sign (alpha in [0, pi/2]). For nearly parallel line directions the
    spatial gap falls back to the point-to-line distance of the centers; for
    planes the gap is the center offset along the normal.
    """
    candidates = []
    for i, fa in enumerate(a):
        for j, fb in enumerate(b):
            if fa.kind != fb.kind:
                continue
            alpha, delta = _feature_gap(fa, fb, plane_normal_offset)
            if alpha <= tau_alpha and delta <= tau_delta:
                candidates.append((alpha, delta, i, j))
    candidates.sort(key=lambda c: (c[0], c[1], c[2], c[3]))
    used_a: set[int] = set()
    used_b: set[int] = set()
    pairs: list[MatchPair] = []
    for alpha, delta, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append(MatchPair(a=a[i], b=b[j], alpha=alpha, delta=delta))
    return pairs


def refine_extrinsics(
    pairs: list[MatchPair],
    n_pairs: int = 100,
    from_frame: str = "a",
    to_frame: str = "b",
) -> RigidTransform:
    """Correction transform from matched line features.

    Rotation comes from the eigenvalue attitude solver over the direction
    pairs (b-side directions are first flipped into the a-side hemisphere so
    the per-feature canonical signs cannot fight each other). Translation
    matches the rotated line centers, using only the components
    perpendicular to each line: a line's center is defined only up to a
    slide along its direction (the two clouds sample different extents), so
    the along-line component carries no alignment information. The result
    maps the a-side onto the b-side.

    Raises DegenerateInput when the directions do not span two axes.
    """
    pairs = sorted(pairs, key=lambda p: (p.alpha, p.delta))[: max(2, n_pairs)]
    if len(pairs) < 2:
        raise DegenerateInput("refinement needs at least 2 matched line pairs")
    d_a = np.array([p.a.direction for p in pairs])
    d_b = np.array([p.b.direction for p in pairs])
    flip = np.sign(np.einsum("ij,ij->i", d_a, d_b))
    flip[flip == 0] = 1.0
    d_b = d_b * flip[:, None]
    q = davenport_rotation(d_a, d_b)
    r = quat_to_matrix(q)
    c_a = np.array([p.a.center for p in pairs])
    c_b = np.array([p.b.center for p in pairs])
    diff = c_b - c_a @ r.T
    # minimize sum ||P_i (t - diff_i)||^2 with P_i = I - d d^T (b-side dirs)
    projectors = np.eye(3)[None, :, :] - d_b[:, :, None] * d_b[:, None, :]
    m = projectors.sum(axis=0)
    rhs = np.einsum("nij,nj->i", projectors, diff)
    t = np.linalg.lstsq(m, rhs, rcond=None)[0]
    return RigidTransform(r, t, from_frame, to_frame)


# ---------------------------------------------------------------------------
# verification and composition
# ---------------------------------------------------------------------------

# Correspondence search gates used before applying the strict verification
# thresholds; wide enough to pair up planes under a grossly wrong extrinsic.
_LOOSE_ANGLE = math.radians(15.0)
_LOOSE_DIST = 2.0


def verify_extrinsics(
    planes_a: list[Feature],
    planes_b: list[Feature],
    t_final: RigidTransform,
    tau_alpha: float = PLANE_ANGLE_GATE,
    tau_delta: float = PLANE_DIST_GATE,
) -> tuple[bool, dict]:
    """Accept the final extrinsics iff matched planes agree within the gates.

    ``planes_a`` are in the target (base) frame; ``planes_b`` are in the
    source sensor frame and are mapped through ``t_final`` first.
    Correspondences are found with loose gates, then every matched pair must
    satisfy ``alpha <= tau_alpha`` and ``delta <= tau_delta`` and at least one
    pair must exist.

    Raises
    ------
    NoPlanes
        If either feature list is empty (inconclusive, distinct from False).
    """
    if not planes_a or not planes_b:
        raise NoPlanes("verification needs plane features from both clouds")
    moved = [f.transformed(t_final) for f in planes_b]
    pairs = match_features(planes_a, moved, _LOOSE_ANGLE, _LOOSE_DIST)
    details = [
        {"alpha_deg": math.degrees(p.alpha), "delta_m": p.delta} for p in pairs
    ]
    ok = bool(pairs) and all(p.alpha <= tau_alpha and p.delta <= tau_delta for p in pairs)
    diagnostics = {
        "n_planes_a": len(planes_a),
        "n_planes_b": len(planes_b),
        "n_matched": len(pairs),
        "pairs": details,
        "tau_alpha_deg": math.degrees(tau_alpha),
        "tau_delta_m": tau_delta,
    }
    return ok, diagnostics


def compose_extrinsics(
    t_init: RigidTransform,
    t_imu: RigidTransform,
    t_gicp: RigidTransform,
    t_refined: RigidTransform,
) -> RigidTransform:
    """Final extrinsics: refined o cloud-alignment o inertial o initial.

    Frame tags must chain right-to-left; FrameMismatch otherwise.
    """
    return t_refined @ t_gicp @ t_imu @ t_init
