"""Gaussian primitives, cameras, and scenes.

Conventions used throughout the toolkit:

* Quaternions are stored ``(w, x, y, z)``.
* Camera rotation maps world to camera coordinates: ``x_cam = R @ x_world + t``.
* The camera looks along +z; the image x axis is ``cross(forward, up)`` for a
  +y world up.  Pixel (row, col) has its center at ``(col + 0.5, row + 0.5)``.
* Gaussian scales are stored in log space and opacities in logit space so that
  unconstrained gradient steps keep the effective scale positive and the
  effective opacity inside (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import InvalidPrimitiveError, ShapeMismatchError

# Screen-space low-pass filter added to both diagonal entries of every
# projected 2D covariance (px^2).  Fixed so renders are reproducible.
COV2D_LOW_PASS = 0.3

# Near plane for projection/culling (meters).
DEFAULT_NEAR = 0.01

_QUAT_NORM_EPS = 1e-12

# Real spherical-harmonics constants, coefficient order matches the common
# 3DGS interchange layout (degree-major, m from -l to l).
_SH_C0 = 0.28209479177387814
_SH_C1 = 0.4886025119029199
_SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
_SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def sh_coeff_count(degree: int) -> int:
    """Number of SH coefficients per color channel for a given degree."""
    if not 0 <= degree <= 3:
        raise ValueError(f"sh degree must be in [0, 3], got {degree}")
    return (degree + 1) ** 2


def normalize_quaternion(q: np.ndarray) -> np.ndarray:
    """Return q / ||q||, raising InvalidPrimitiveError for degenerate input.

    Inputs already unit within 1e-12 are returned bit-for-bit: renormalizing
    them would wobble the last ulp, breaking bitwise file round-trips.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise ShapeMismatchError(f"quaternion must have shape (4,), got {q.shape}")
    norm = float(np.linalg.norm(q))
    if norm <= _QUAT_NORM_EPS:
        raise InvalidPrimitiveError(f"degenerate quaternion with norm {norm:.3e}")
    if abs(norm - 1.0) <= 1e-12:
        return q.copy()
    return q / norm


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quats_to_rotmats(q: np.ndarray) -> np.ndarray:
    """Vectorized quat_to_rotmat for an (N, 4) array of unit quaternions."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    out = np.empty((q.shape[0], 3, 3))
    out[:, 0, 0] = 1 - 2 * (y * y + z * z)
    out[:, 0, 1] = 2 * (x * y - w * z)
    out[:, 0, 2] = 2 * (x * z + w * y)
    out[:, 1, 0] = 2 * (x * y + w * z)
    out[:, 1, 1] = 1 - 2 * (x * x + z * z)
    out[:, 1, 2] = 2 * (y * z - w * x)
    out[:, 2, 0] = 2 * (x * z - w * y)
    out[:, 2, 1] = 2 * (y * z + w * x)
    out[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def rotmat_to_quat(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a proper rotation matrix.

    Uses Shepperd's branch selection for numerical stability.
    """
    m = np.asarray(rot, dtype=np.float64)
    trace = m[0, 0] + m[1, 1] + m[2, 2]
    if trace > 0:
        s = np.sqrt(trace + 1.0) * 2
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return normalize_quaternion(q)


@dataclass(frozen=True)
class CameraPose:
    """Rigid pose plus pinhole intrinsics.

    Attributes:
        rotation: Unit quaternion (w, x, y, z) mapping world to camera.
        translation: Translation of the world-to-camera transform, meters.
        fx, fy: Focal lengths in pixels.
        cx, cy: Principal point in pixels.
        width, height: Image size in pixels.
        pose_id: Stable string identifier.
    """

    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "rotation", normalize_quaternion(self.rotation))
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3)
        )
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not (0 <= self.cx < self.width):
            raise ValueError(f"cx={self.cx} outside [0, {self.width})")
        if not (0 <= self.cy < self.height):
            raise ValueError(f"cy={self.cy} outside [0, {self.height})")

    def rotation_matrix(self) -> np.ndarray:
        """World-to-camera rotation matrix."""
        return quat_to_rotmat(self.rotation)

    def camera_center(self) -> np.ndarray:
        """Camera center in world coordinates (-R^T t)."""
        return -self.rotation_matrix().T @ self.translation

    def optical_axis(self) -> np.ndarray:
        """Unit viewing direction (+z of the camera frame) in world coordinates."""
        return self.rotation_matrix().T @ np.array([0.0, 0.0, 1.0])

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 3) world points into the camera frame."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts @ self.rotation_matrix().T + self.translation


@dataclass
class GaussianSplat:
    """One anisotropic 3D Gaussian primitive with raw (unconstrained) storage.

    Attributes:
        mean: Center in world meters.
        scale_raw: Log of the per-axis scale.
        rotation_raw: Unnormalized quaternion (w, x, y, z); normalized on read.
        opacity_raw: Logit of the opacity.
        sh: ((degree + 1)^2, 3) spherical-harmonics color coefficients.
    """

    mean: np.ndarray
    scale_raw: np.ndarray
    rotation_raw: np.ndarray
    opacity_raw: float
    sh: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.scale_raw = np.asarray(self.scale_raw, dtype=np.float64).reshape(3)
        self.rotation_raw = np.asarray(self.rotation_raw, dtype=np.float64).reshape(4)
        self.opacity_raw = float(self.opacity_raw)
        self.sh = np.asarray(self.sh, dtype=np.float64)
        if self.sh.ndim != 2 or self.sh.shape[1] != 3:
            raise ShapeMismatchError(f"sh must have shape (K, 3), got {self.sh.shape}")
        if np.linalg.norm(self.rotation_raw) <= _QUAT_NORM_EPS:
            raise InvalidPrimitiveError("rotation_raw has near-zero norm")

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.scale_raw)

    @property
    def opacity(self) -> float:
        return float(expit(self.opacity_raw))

    @property
    def rotation(self) -> np.ndarray:
        return normalize_quaternion(self.rotation_raw)


@dataclass
class Scene:
    """An ordered collection of Gaussian splats with shared SH degree.

    Splat parameters are stored packed (struct-of-arrays) for rendering speed;
    the ``splats`` property materializes per-splat views on demand.
    """

    means: np.ndarray
    scales_raw: np.ndarray
    rotations_raw: np.ndarray
    opacities_raw: np.ndarray
    sh: np.ndarray
    sh_degree: int = 0
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = self.means.shape[0]
        self.scales_raw = np.asarray(self.scales_raw, dtype=np.float64).reshape(n, 3)
        self.rotations_raw = np.asarray(self.rotations_raw, dtype=np.float64).reshape(n, 4)
        self.opacities_raw = np.asarray(self.opacities_raw, dtype=np.float64).reshape(n)
        k = sh_coeff_count(self.sh_degree)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(n, k, 3)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        if np.any((self.background < 0) | (self.background > 1)):
            raise ValueError("background rgb must lie in [0, 1]")

    @classmethod
    def from_splats(
        cls, splats: list[GaussianSplat], sh_degree: int, background=(0.0, 0.0, 0.0)
    ) -> "Scene":
        k = sh_coeff_count(sh_degree)
        for i, s in enumerate(splats):
            if s.sh.shape[0] != k:
                raise ShapeMismatchError(
                    f"splat {i} carries {s.sh.shape[0]} sh coefficients, expected {k}"
                )
        if splats:
            means = np.stack([s.mean for s in splats])
            scales = np.stack([s.scale_raw for s in splats])
            rots = np.stack([s.rotation_raw for s in splats])
            ops = np.array([s.opacity_raw for s in splats])
            sh = np.stack([s.sh for s in splats])
        else:
            means = np.zeros((0, 3))
            scales = np.zeros((0, 3))
            rots = np.zeros((0, 4))
            ops = np.zeros(0)
            sh = np.zeros((0, k, 3))
        return cls(means, scales, rots, ops, sh, sh_degree, background)

    @property
    def splats(self) -> list[GaussianSplat]:
        return [
            GaussianSplat(
                self.means[i],
                self.scales_raw[i],
                self.rotations_raw[i],
                self.opacities_raw[i],
                self.sh[i],
            )
            for i in range(len(self))
        ]

    def __len__(self) -> int:
        return self.means.shape[0]

    @property
    def num_splats(self) -> int:
        return len(self)

    def copy(self) -> "Scene":
        return Scene(
            self.means.copy(),
            self.scales_raw.copy(),
            self.rotations_raw.copy(),
            self.opacities_raw.copy(),
            self.sh.copy(),
            self.sh_degree,
            self.background.copy(),
        )

    def allclose(self, other: "Scene", atol: float = 0.0) -> bool:
        """Exact (atol=0) or tolerant parameter equality with another scene."""
        if len(self) != len(other) or self.sh_degree != other.sh_degree:
            return False
        pairs = [
            (self.means, other.means),
            (self.scales_raw, other.scales_raw),
            (self.rotations_raw, other.rotations_raw),
            (self.opacities_raw, other.opacities_raw),
            (self.sh, other.sh),
        ]
        if atol == 0.0:
            return all(np.array_equal(a, b) for a, b in pairs)
        return all(np.allclose(a, b, atol=atol, rtol=0.0) for a, b in pairs)


def build_covariance(scale_raw: np.ndarray, rotation_raw: np.ndarray) -> np.ndarray:
    """3D covariance R S S^T R^T from raw (log-scale, unnormalized quat) storage.

    Args:
        scale_raw: (3,) log scales.
        rotation_raw: (4,) unnormalized quaternion; must have norm > 1e-12.

    Returns:
        (3, 3) symmetric positive-definite covariance.
    """
    scale_raw = np.asarray(scale_raw, dtype=np.float64).reshape(3)
    q = normalize_quaternion(np.asarray(rotation_raw, dtype=np.float64).reshape(4))
    rot = quat_to_rotmat(q)
    a = rot * np.exp(scale_raw)[None, :]
    return a @ a.T


def build_covariances(scales_raw: np.ndarray, rotations_raw: np.ndarray) -> np.ndarray:
    """Vectorized build_covariance over (N, 3) scales and (N, 4) quaternions."""
    norms = np.linalg.norm(rotations_raw, axis=1)
    if np.any(norms <= _QUAT_NORM_EPS):
        bad = int(np.argmax(norms <= _QUAT_NORM_EPS))
        raise InvalidPrimitiveError(f"splat {bad} has a degenerate quaternion")
    q = rotations_raw / norms[:, None]
    rots = quats_to_rotmats(q)
    a = rots * np.exp(scales_raw)[:, None, :]
    return a @ np.transpose(a, (0, 2, 1))


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values for unit directions.

    Args:
        dirs: (..., 3) unit direction vectors.
        degree: SH degree in [0, 3].

    Returns:
        (..., (degree + 1)^2) basis values.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    k = sh_coeff_count(degree)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = np.empty(dirs.shape[:-1] + (k,))
    out[..., 0] = _SH_C0
    if degree >= 1:
        out[..., 1] = -_SH_C1 * y
        out[..., 2] = _SH_C1 * z
        out[..., 3] = -_SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = _SH_C2[0] * x * y
        out[..., 5] = _SH_C2[1] * y * z
        out[..., 6] = _SH_C2[2] * (2 * zz - xx - yy)
        out[..., 7] = _SH_C2[3] * x * z
        out[..., 8] = _SH_C2[4] * (xx - yy)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 9] = _SH_C3[0] * y * (3 * xx - yy)
        out[..., 10] = _SH_C3[1] * x * y * z
        out[..., 11] = _SH_C3[2] * y * (4 * zz - xx - yy)
        out[..., 12] = _SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        out[..., 13] = _SH_C3[4] * x * (4 * zz - xx - yy)
        out[..., 14] = _SH_C3[5] * z * (xx - yy)
        out[..., 15] = _SH_C3[6] * x * (xx - 3 * yy)
    return out


def sh_basis_gradient(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Partial derivatives of each SH basis value w.r.t. the direction components.

    Returns:
        (..., (degree + 1)^2, 3) array; [..., k, d] = d(basis_k)/d(dir_d).
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    k = sh_coeff_count(degree)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    grad = np.zeros(dirs.shape[:-1] + (k, 3))
    if degree >= 1:
        grad[..., 1, 1] = -_SH_C1
        grad[..., 2, 2] = _SH_C1
        grad[..., 3, 0] = -_SH_C1
    if degree >= 2:
        grad[..., 4, 0] = _SH_C2[0] * y
        grad[..., 4, 1] = _SH_C2[0] * x
        grad[..., 5, 1] = _SH_C2[1] * z
        grad[..., 5, 2] = _SH_C2[1] * y
        grad[..., 6, 0] = -2 * _SH_C2[2] * x
        grad[..., 6, 1] = -2 * _SH_C2[2] * y
        grad[..., 6, 2] = 4 * _SH_C2[2] * z
        grad[..., 7, 0] = _SH_C2[3] * z
        grad[..., 7, 2] = _SH_C2[3] * x
        grad[..., 8, 0] = 2 * _SH_C2[4] * x
        grad[..., 8, 1] = -2 * _SH_C2[4] * y
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        grad[..., 9, 0] = _SH_C3[0] * 6 * x * y
        grad[..., 9, 1] = _SH_C3[0] * (3 * xx - 3 * yy)
        grad[..., 10, 0] = _SH_C3[1] * y * z
        grad[..., 10, 1] = _SH_C3[1] * x * z
        grad[..., 10, 2] = _SH_C3[1] * x * y
        grad[..., 11, 0] = -2 * _SH_C3[2] * x * y
        grad[..., 11, 1] = _SH_C3[2] * (4 * zz - xx - 3 * yy)
        grad[..., 11, 2] = 8 * _SH_C3[2] * y * z
        grad[..., 12, 0] = -6 * _SH_C3[3] * x * z
        grad[..., 12, 1] = -6 * _SH_C3[3] * y * z
        grad[..., 12, 2] = _SH_C3[3] * (6 * zz - 3 * xx - 3 * yy)
        grad[..., 13, 0] = _SH_C3[4] * (4 * zz - 3 * xx - yy)
        grad[..., 13, 1] = -2 * _SH_C3[4] * x * y
        grad[..., 13, 2] = 8 * _SH_C3[4] * x * z
        grad[..., 14, 0] = 2 * _SH_C3[5] * x * z
        grad[..., 14, 1] = -2 * _SH_C3[5] * y * z
        grad[..., 14, 2] = _SH_C3[5] * (xx - yy)
        grad[..., 15, 0] = _SH_C3[6] * (3 * xx - 3 * yy)
        grad[..., 15, 1] = -6 * _SH_C3[6] * x * y
    return grad


def eval_sh(sh: np.ndarray, view_dir: np.ndarray, degree: int) -> np.ndarray:
    """View-dependent rgb from SH coefficients: 0.5 + sum_k c_k Y_k(dir).

    No clamping is applied here; final compositing clamps to [0, 1].

    Args:
        sh: (K, 3) coefficients, or (N, K, 3) for a batch.
        view_dir: (3,) unit direction, or (N, 3) matching a batched sh.
        degree: SH degree; K must equal (degree + 1)^2.

    Returns:
        (3,) rgb, or (N, 3) for batched input.
    """
    sh = np.asarray(sh, dtype=np.float64)
    k = sh_coeff_count(degree)
    single = sh.ndim == 2
    if single:
        sh = sh[None]
        view_dir = np.asarray(view_dir, dtype=np.float64)[None]
    if sh.shape[1] != k:
        raise ShapeMismatchError(
            f"expected {k} sh coefficients for degree {degree}, got {sh.shape[1]}"
        )
    basis = sh_basis(view_dir, degree)
    rgb = 0.5 + np.einsum("nk,nkc->nc", basis, sh)
    return rgb[0] if single else rgb


@dataclass
class GaussianProjection:
    """Screen-space footprint of one splat.

    Attributes:
        mean2d: Projected center in pixels.
        cov2d: 2x2 screen-space covariance (low-pass floor included).
        depth: Camera-space z in meters.
    """

    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float


@dataclass
class ProjectedSplats:
    """Vectorized projection of every splat in a scene against one camera.

    Intermediate quantities (camera-space means, projection Jacobians,
    camera-space covariances) are retained for the analytic backward pass.
    """

    in_front: np.ndarray  # (N,) bool, camera-space z > near
    t_cam: np.ndarray  # (N, 3)
    mean2d: np.ndarray  # (N, 2)
    cov2d: np.ndarray  # (N, 2, 2)
    depth: np.ndarray  # (N,)
    jacobian: np.ndarray  # (N, 2, 3)
    cov_cam: np.ndarray  # (N, 3, 3) world covariance rotated into the camera frame
    rot_wc: np.ndarray  # (3, 3) world-to-camera rotation


def project_splats(
    means: np.ndarray,
    scales_raw: np.ndarray,
    rotations_raw: np.ndarray,
    camera: CameraPose,
    near: float = DEFAULT_NEAR,
) -> ProjectedSplats:
    """EWA-style perspective projection of a batch of Gaussians.

    cov2d = J Sigma_cam J^T + COV2D_LOW_PASS * I, with J the Jacobian of the
    pinhole projection at the camera-space mean.  Splats behind the near plane
    are flagged in ``in_front``; their 2D entries are undefined.
    """
    rot = camera.rotation_matrix()
    t_cam = means @ rot.T + camera.translation
    z = t_cam[:, 2]
    in_front = z > near
    zs = np.where(in_front, z, 1.0)  # placeholder depth avoids divide warnings

    mean2d = np.empty((means.shape[0], 2))
    mean2d[:, 0] = camera.fx * t_cam[:, 0] / zs + camera.cx
    mean2d[:, 1] = camera.fy * t_cam[:, 1] / zs + camera.cy

    jac = np.zeros((means.shape[0], 2, 3))
    jac[:, 0, 0] = camera.fx / zs
    jac[:, 0, 2] = -camera.fx * t_cam[:, 0] / (zs * zs)
    jac[:, 1, 1] = camera.fy / zs
    jac[:, 1, 2] = -camera.fy * t_cam[:, 1] / (zs * zs)

    cov3d = build_covariances(scales_raw, rotations_raw)
    cov_cam = np.einsum("ab,nbc,dc->nad", rot, cov3d, rot)
    cov2d = np.einsum("nab,nbc,ndc->nad", jac, cov_cam, jac)
    cov2d[:, 0, 0] += COV2D_LOW_PASS
    cov2d[:, 1, 1] += COV2D_LOW_PASS
    cov2d[:, 1, 0] = cov2d[:, 0, 1]  # exactly symmetric despite summation order

    return ProjectedSplats(in_front, t_cam, mean2d, cov2d, z, jac, cov_cam, rot)


def project_gaussian(
    splat: GaussianSplat, camera: CameraPose, near: float = DEFAULT_NEAR
) -> GaussianProjection | None:
    """Project one splat; returns None when culled (behind the near plane)."""
    proj = project_splats(
        splat.mean[None], splat.scale_raw[None], splat.rotation_raw[None], camera, near
    )
    if not proj.in_front[0]:
        return None
    return GaussianProjection(proj.mean2d[0], proj.cov2d[0], float(proj.depth[0]))
