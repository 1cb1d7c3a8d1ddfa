"""Camera-path sampling: interpolation, ellipse orbits, and the hybrid sampler.

The hybrid sampler walks from one reference pose to its nearest point on a
fitted orbit, along the orbit toward the point nearest the second reference
(shorter angular direction), and back down to the second reference, so plans
start and end exactly at the references while covering extra viewing angles
in between.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateGeometryError, ShapeMismatchError
from .scene import CameraPose, normalize_quaternion, rotmat_to_quat

logger = logging.getLogger(__name__)

WORLD_UP = np.array([0.0, 1.0, 0.0])

LABEL_REFERENCE = "reference"
LABEL_INTERP = "interp"
LABEL_ORBIT = "orbit"
_VALID_LABELS = frozenset({LABEL_REFERENCE, LABEL_INTERP, LABEL_ORBIT})

_NEAREST_THETA_TOL = 1e-8
_COARSE_THETA_SAMPLES = 512


@dataclass
class TrajectoryPlan:
    """Ordered pose sequence with per-pose segment labels.

    Attributes:
        poses: Camera poses in traversal order.
        labels: One of reference / interp / orbit per pose.
        source_refs: (pose_id, pose_id) of the two reference poses.
        fallback_interpolation: True when an orbit-based request degenerated
            to pure interpolation (e.g. zero-length arc).
    """

    poses: list[CameraPose]
    labels: list[str]
    source_refs: tuple[str, str]
    fallback_interpolation: bool = False

    def __post_init__(self):
        if len(self.poses) != len(self.labels):
            raise ShapeMismatchError("poses and labels must have equal length")
        bad = set(self.labels) - _VALID_LABELS
        if bad:
            raise ValueError(f"unknown trajectory labels: {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.poses)


@dataclass
class OrbitPath:
    """Planar ellipse with look-at target.

    ``basis_u`` and ``basis_v`` are the orthonormal in-plane principal axes;
    ``radii`` are the semi-axes along them.  Points on the orbit are
    center + radii[0] cos(theta) basis_u + radii[1] sin(theta) basis_v.
    """

    center: np.ndarray
    basis_u: np.ndarray
    basis_v: np.ndarray
    radii: tuple[float, float]
    look_at: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.basis_u = np.asarray(self.basis_u, dtype=np.float64).reshape(3)
        self.basis_v = np.asarray(self.basis_v, dtype=np.float64).reshape(3)
        self.look_at = np.asarray(self.look_at, dtype=np.float64).reshape(3)
        if abs(np.dot(self.basis_u, self.basis_v)) > 1e-9:
            raise ValueError("orbit basis vectors must be orthogonal")
        for b in (self.basis_u, self.basis_v):
            if abs(np.linalg.norm(b) - 1.0) > 1e-9:
                raise ValueError("orbit basis vectors must be unit length")
        if min(self.radii) <= 0:
            raise ValueError("orbit radii must be positive")

    def normal(self) -> np.ndarray:
        return np.cross(self.basis_u, self.basis_v)

    def point(self, theta: float) -> np.ndarray:
        a, b = self.radii
        return self.center + a * np.cos(theta) * self.basis_u + b * np.sin(theta) * self.basis_v


def slerp(qa: np.ndarray, qb: np.ndarray, t: float) -> np.ndarray:
    """Spherical interpolation with hemisphere correction (negates qb if needed)."""
    qa = normalize_quaternion(np.asarray(qa, dtype=np.float64))
    qb = normalize_quaternion(np.asarray(qb, dtype=np.float64))
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-12:
        return normalize_quaternion((1.0 - t) * qa + t * qb)
    theta = np.arccos(min(dot, 1.0))
    s = np.sin(theta)
    return (np.sin((1.0 - t) * theta) * qa + np.sin(t * theta) * qb) / s


def interpolate_pose(a: CameraPose, b: CameraPose, t: float, pose_id: str | None = None) -> CameraPose:
    """Slerp rotations and lerp translations; intrinsics copied from ``a``.

    t = 0 and t = 1 return exact copies of the endpoint poses (up to the
    hemisphere sign of the quaternion at t = 1).
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if t == 0.0:
        return replace(a, pose_id=pose_id if pose_id is not None else a.pose_id)
    if t == 1.0:
        return replace(
            a,
            rotation=b.rotation.copy(),
            translation=b.translation.copy(),
            pose_id=pose_id if pose_id is not None else b.pose_id,
        )
    rot = slerp(a.rotation, b.rotation, t)
    trans = (1.0 - t) * a.translation + t * b.translation
    return replace(a, rotation=rot, translation=trans, pose_id=pose_id or f"interp_{t:.4f}")


def look_at_pose(
    eye: np.ndarray,
    target: np.ndarray,
    template: CameraPose,
    pose_id: str,
    up: np.ndarray = WORLD_UP,
) -> CameraPose:
    """Pose at ``eye`` whose optical axis passes through ``target``.

    The camera x axis is cross(forward, up); when forward is parallel to the
    world up, +z is used as the fallback up vector.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise DegenerateGeometryError("look-at target coincides with the camera center")
    forward = forward / norm
    x_axis = np.cross(forward, up)
    if np.linalg.norm(x_axis) < 1e-9:
        x_axis = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    x_axis = x_axis / np.linalg.norm(x_axis)
    y_axis = np.cross(forward, x_axis)
    rot = np.stack([x_axis, y_axis, forward])
    quat = rotmat_to_quat(rot)
    translation = -rot @ eye
    return replace(template, rotation=quat, translation=translation, pose_id=pose_id)


def fit_orbit_path(poses: list[CameraPose]) -> OrbitPath:
    """Least-squares planar ellipse through the camera centers.

    The plane is the total-least-squares fit to the centers; within the plane
    a general conic is fit when five or more centers are available (falling
    back to a circle when the conic is not an ellipse), otherwise a
    least-squares circle.  The look-at target is the mean of the points where
    each camera's optical axis meets the plane; axes nearly parallel to the
    plane are skipped, and if every axis is skipped the closest point to all
    axes (projected into the plane) is used instead.

    Raises:
        DegenerateGeometryError: Fewer than 3 poses or collinear centers.
    """
    if len(poses) < 3:
        raise DegenerateGeometryError("orbit fitting needs at least 3 poses")
    centers = np.stack([p.camera_center() for p in poses])
    centroid = centers.mean(axis=0)
    centered = centers - centroid
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    scale = svals[0]
    if scale < 1e-12 or svals[1] <= 1e-9 * scale:
        raise DegenerateGeometryError("camera centers are collinear (or coincident)")
    e_u, e_v, normal = vt[0], vt[1], vt[2]
    uv = centered @ np.stack([e_u, e_v]).T

    fit = None
    if len(poses) >= 5:
        fit = _fit_conic_ellipse(uv)
        if fit is None:
            logger.debug("conic fit was not an ellipse; falling back to circle fit")
    if fit is None:
        fit = _fit_circle(uv)
    (u0, v0), axes2d, radii = fit

    center3d = centroid + u0 * e_u + v0 * e_v
    basis_u = axes2d[0, 0] * e_u + axes2d[0, 1] * e_v
    basis_v = axes2d[1, 0] * e_u + axes2d[1, 1] * e_v
    basis_u /= np.linalg.norm(basis_u)
    basis_v /= np.linalg.norm(basis_v)

    look_at = _mean_axis_plane_intersection(poses, centroid, normal)
    return OrbitPath(center3d, basis_u, basis_v, (float(radii[0]), float(radii[1])), look_at)


def _fit_circle(uv: np.ndarray):
    """Kasa circle fit: linear least squares on u^2 + v^2 = 2au + 2bv + c."""
    u, v = uv[:, 0], uv[:, 1]
    design = np.stack([2 * u, 2 * v, np.ones_like(u)], axis=1)
    rhs = u * u + v * v
    (a, b, c), *_ = np.linalg.lstsq(design, rhs, rcond=None)
    r2 = c + a * a + b * b
    if r2 <= 0:
        raise DegenerateGeometryError("circle fit collapsed")
    r = float(np.sqrt(r2))
    return (a, b), np.eye(2), (r, r)


def _fit_conic_ellipse(uv: np.ndarray):
    """General-conic least squares; returns None unless the fit is an ellipse."""
    u, v = uv[:, 0], uv[:, 1]
    design = np.stack([u * u, u * v, v * v, u, v, np.ones_like(u)], axis=1)
    _, _, vt = np.linalg.svd(design, full_matrices=False)
    A, B, C, D, E, F = vt[-1]
    if B * B - 4 * A * C >= 0:
        return None
    m2 = np.array([[2 * A, B], [B, 2 * C]])
    try:
        center = np.linalg.solve(m2, [-D, -E])
    except np.linalg.LinAlgError:
        return None
    u0, v0 = center
    f_c = A * u0 * u0 + B * u0 * v0 + C * v0 * v0 + D * u0 + E * v0 + F
    quad = np.array([[A, B / 2], [B / 2, C]])
    evals, evecs = np.linalg.eigh(quad)
    r2 = -f_c / evals
    if np.any(r2 <= 0):
        return None
    radii = np.sqrt(r2)
    order = np.argsort(-radii)  # major axis first
    axes2d = evecs.T[order]
    return (u0, v0), axes2d, tuple(radii[order])


def _mean_axis_plane_intersection(
    poses: list[CameraPose], plane_point: np.ndarray, normal: np.ndarray
) -> np.ndarray:
    points = []
    for p in poses:
        origin = p.camera_center()
        direction = p.optical_axis()
        denom = float(np.dot(direction, normal))
        if abs(denom) < 1e-9:
            continue
        s = float(np.dot(plane_point - origin, normal)) / denom
        points.append(origin + s * direction)
    if points:
        return np.mean(points, axis=0)
    # All axes lie in the plane: use the least-squares closest point to the
    # axis lines, projected into the plane.
    lhs = np.zeros((3, 3))
    rhs = np.zeros(3)
    for p in poses:
        d = p.optical_axis()
        proj = np.eye(3) - np.outer(d, d)
        lhs += proj
        rhs += proj @ p.camera_center()
    point = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    return point - np.dot(point - plane_point, normal) * normal


def nearest_orbit_theta(orbit: OrbitPath, point: np.ndarray) -> float:
    """Angle of the orbit point closest to ``point``.

    Coarse 512-sample scan followed by golden-section refinement to 1e-8; the
    scan guards against the multiple local minima of point-to-ellipse distance.
    """
    point = np.asarray(point, dtype=np.float64)

    def dist2(theta):
        delta = orbit.point(theta) - point
        return float(np.dot(delta, delta))

    thetas = np.linspace(0.0, 2.0 * np.pi, _COARSE_THETA_SAMPLES, endpoint=False)
    values = [dist2(t) for t in thetas]
    best = int(np.argmin(values))
    step = 2.0 * np.pi / _COARSE_THETA_SAMPLES
    lo, hi = thetas[best] - step, thetas[best] + step

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = dist2(c), dist2(d)
    while b - a > _NEAREST_THETA_TOL:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = dist2(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = dist2(d)
    return float((a + b) / 2.0 % (2.0 * np.pi))


def _wrap_angle(theta: float) -> float:
    return float((theta + np.pi) % (2.0 * np.pi) - np.pi)


def sample_interpolation(
    ref_a: CameraPose, ref_b: CameraPose, n: int, id_prefix: str | None = None
) -> TrajectoryPlan:
    """n poses at t = k/(n-1) between the references (endpoints exact)."""
    if n < 2:
        raise ValueError(f"interpolation plans need n >= 2, got {n}")
    prefix = id_prefix or f"{ref_a.pose_id}-{ref_b.pose_id}"
    poses = []
    labels = []
    for k in range(n):
        t = k / (n - 1)
        pid = None if k in (0, n - 1) else f"{prefix}:t{k:03d}"
        poses.append(interpolate_pose(ref_a, ref_b, t, pose_id=pid))
        labels.append(LABEL_REFERENCE if k in (0, n - 1) else LABEL_INTERP)
    return TrajectoryPlan(poses, labels, (ref_a.pose_id, ref_b.pose_id))


def sample_ellipse(
    orbit: OrbitPath,
    arc: tuple[float, float],
    n: int,
    template: CameraPose,
    id_prefix: str = "orbit",
) -> TrajectoryPlan:
    """n look-at poses at uniform angle steps over [start, end).

    The end angle is excluded so a full 2*pi arc yields evenly spaced poses
    with no duplicate; intrinsics come from ``template``.
    """
    if n < 1:
        raise ValueError(f"ellipse plans need n >= 1, got {n}")
    theta_start, theta_end = arc
    step = (theta_end - theta_start) / n
    poses = [
        look_at_pose(
            orbit.point(theta_start + k * step), orbit.look_at, template, f"{id_prefix}_{k:03d}"
        )
        for k in range(n)
    ]
    labels = [LABEL_ORBIT] * n
    return TrajectoryPlan(poses, labels, (poses[0].pose_id, poses[-1].pose_id))


def sample_reference_guided(
    ref_a: CameraPose,
    ref_b: CameraPose,
    orbit: OrbitPath,
    n: int,
    split: tuple[int, int, int],
    id_prefix: str | None = None,
) -> TrajectoryPlan:
    """Hybrid plan: ref_a -> orbit -> ref_b with per-segment pose counts.

    Segment 1 interpolates from ref_a to its nearest orbit point (n1 poses
    covering [0, 1) of the leg), segment 2 walks the orbit toward the point
    nearest ref_b along the shorter angular direction (n2 poses covering
    [theta_a, theta_b)), and segment 3 interpolates into ref_b (n3 poses
    covering (0, 1] of the closing leg).  Endpoints are exactly the
    references.  n2 = 0 degenerates to pure interpolation, as does a
    zero-length orbit arc (with the fallback flag set).
    """
    n1, n2, n3 = split
    if n1 + n2 + n3 != n:
        raise ValueError(f"split {split} does not sum to n = {n}")
    if n1 < 1 or n3 < 1 or n2 < 0:
        raise ValueError(f"split {split} violates n1, n3 >= 1 and n2 >= 0")

    def interpolation_fallback(warn: bool) -> TrajectoryPlan:
        plan = sample_interpolation(ref_a, ref_b, n, id_prefix=id_prefix)
        return TrajectoryPlan(plan.poses, plan.labels, plan.source_refs, fallback_interpolation=warn)

    if n2 == 0:
        return interpolation_fallback(warn=False)

    theta_a = nearest_orbit_theta(orbit, ref_a.camera_center())
    theta_b = nearest_orbit_theta(orbit, ref_b.camera_center())
    delta = _wrap_angle(theta_b - theta_a)
    if abs(delta) < 1e-9:
        logger.warning(
            "reference-guided plan %s -> %s has a zero-length orbit arc; "
            "falling back to interpolation",
            ref_a.pose_id,
            ref_b.pose_id,
        )
        return interpolation_fallback(warn=True)

    pair = id_prefix or f"{ref_a.pose_id}-{ref_b.pose_id}"
    orbit_pose_a = look_at_pose(orbit.point(theta_a), orbit.look_at, ref_a, f"{pair}:onA")
    orbit_pose_b = look_at_pose(orbit.point(theta_b), orbit.look_at, ref_b, f"{pair}:onB")

    poses: list[CameraPose] = []
    labels: list[str] = []
    for k in range(n1):
        t = k / n1
        pid = None if k == 0 else f"{pair}:t{k:03d}"
        poses.append(interpolate_pose(ref_a, orbit_pose_a, t, pose_id=pid))
        labels.append(LABEL_REFERENCE if k == 0 else LABEL_INTERP)
    for j in range(n2):
        theta = theta_a + delta * j / n2
        poses.append(
            look_at_pose(orbit.point(theta), orbit.look_at, ref_a, f"{pair}:t{n1 + j:03d}")
        )
        labels.append(LABEL_ORBIT)
    for k in range(1, n3 + 1):
        t = k / n3
        idx = n1 + n2 + k - 1
        pid = None if k == n3 else f"{pair}:t{idx:03d}"
        poses.append(interpolate_pose(orbit_pose_b, ref_b, t, pose_id=pid))
        labels.append(LABEL_REFERENCE if k == n3 else LABEL_INTERP)

    return TrajectoryPlan(poses, labels, (ref_a.pose_id, ref_b.pose_id))


def pose_distance(a: CameraPose, b: CameraPose) -> tuple[float, float]:
    """(geodesic rotation angle in radians, translation distance in meters).

    The angle is recovered from the quaternion chord (4 asin(chord / 2)),
    which stays accurate near zero where arccos of the dot product loses
    half the float mantissa.
    """
    chord = min(
        float(np.linalg.norm(a.rotation - b.rotation)),
        float(np.linalg.norm(a.rotation + b.rotation)),
    )
    angle = 4.0 * np.arcsin(min(chord / 2.0, 1.0))
    return angle, float(np.linalg.norm(a.translation - b.translation))
