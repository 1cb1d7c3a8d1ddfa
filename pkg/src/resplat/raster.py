"""Tile-based forward rendering and the analytic backward pass.

Per pixel the composited color is

    C = sum_i c_i a_i prod_{j<i} (1 - a_j) + T_final * background

over the depth-sorted visible splats, with a_i = sigma_i * exp(-0.5 d^T
cov2d^{-1} d) evaluated at the pixel center, clamped to <= 0.99.
Contributions below ``alpha_cutoff`` are skipped and compositing stops once
the accumulated transmittance falls below ``transmittance_floor``.

The tiled renderer and the brute-force reference share every per-splat
quantity and the compositing kernel; they differ only in which splats are
considered per pixel.  Tile lists are built from bounding rectangles of the
exact iso-contour a_i = alpha_cutoff (half extents sqrt(2 ln(sigma/cutoff) *
cov2d_diag)), so any splat absent from a tile list is provably below the
cutoff at every pixel of that tile and the two paths composite identical
contribution sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import RenderError, ShapeMismatchError
from .scene import (
    CameraPose,
    DEFAULT_NEAR,
    ProjectedSplats,
    Scene,
    project_splats,
    quats_to_rotmats,
    sh_basis,
    sh_basis_gradient,
    sh_coeff_count,
)

ALPHA_MAX = 0.99


@dataclass
class RenderConfig:
    """Rendering knobs.

    Attributes:
        tile_size: Tile edge length in pixels (>= 4).
        alpha_cutoff: Minimum per-splat alpha contribution; smaller values are skipped.
        transmittance_floor: Compositing stops once transmittance drops below this.
        background: Optional rgb override; None uses the scene background.
        near: Near-plane distance for culling, meters.
    """

    tile_size: int = 16
    alpha_cutoff: float = 1.0 / 255.0
    transmittance_floor: float = 1e-4
    background: np.ndarray | None = None
    near: float = DEFAULT_NEAR

    def __post_init__(self):
        if self.tile_size < 4:
            raise ValueError(f"tile_size must be >= 4, got {self.tile_size}")
        if not 0.0 < self.alpha_cutoff < 1.0:
            raise ValueError("alpha_cutoff must lie in (0, 1)")
        if not 0.0 < self.transmittance_floor < 1.0:
            raise ValueError("transmittance_floor must lie in (0, 1)")
        if self.background is not None:
            self.background = np.asarray(self.background, dtype=np.float64).reshape(3)


@dataclass
class RenderedFrame:
    """Forward-render output.

    Attributes:
        rgb: (H, W, 3) colors in [0, 1].
        alpha: (H, W) accumulated opacity (1 - final transmittance).
        per_pixel_contributor_count: (H, W) number of composited splats.
    """

    rgb: np.ndarray
    alpha: np.ndarray
    per_pixel_contributor_count: np.ndarray


@dataclass
class GradientBuffer:
    """Per-splat gradients with respect to the raw (stored) parameters."""

    mean: np.ndarray
    scale_raw: np.ndarray
    rotation_raw: np.ndarray
    opacity_raw: np.ndarray
    sh: np.ndarray

    @classmethod
    def zeros(cls, scene: Scene) -> "GradientBuffer":
        n = len(scene)
        k = sh_coeff_count(scene.sh_degree)
        return cls(
            mean=np.zeros((n, 3)),
            scale_raw=np.zeros((n, 3)),
            rotation_raw=np.zeros((n, 4)),
            opacity_raw=np.zeros(n),
            sh=np.zeros((n, k, 3)),
        )

    def groups(self) -> dict[str, np.ndarray]:
        return {
            "mean": self.mean,
            "scale_raw": self.scale_raw,
            "rotation_raw": self.rotation_raw,
            "opacity_raw": self.opacity_raw,
            "sh": self.sh,
        }


def _check_finite(scene: Scene) -> None:
    ok = (
        np.isfinite(scene.means).all(axis=1)
        & np.isfinite(scene.scales_raw).all(axis=1)
        & np.isfinite(scene.rotations_raw).all(axis=1)
        & np.isfinite(scene.opacities_raw)
        & np.isfinite(scene.sh).all(axis=(1, 2))
    )
    if not ok.all():
        raise RenderError(f"splat {int(np.argmin(ok))} has non-finite parameters")


@dataclass
class _Prepared:
    """Shared per-splat state for forward and backward passes.

    Arrays are indexed over the visible set, already depth-sorted with
    (camera-space z, original splat index) as the key.
    """

    indices: np.ndarray  # (V,) original splat indices in composite order
    mean2d: np.ndarray  # (V, 2)
    lam: np.ndarray  # (V, 2, 2) inverse 2D covariance
    sigma: np.ndarray  # (V,)
    colors: np.ndarray  # (V, 3) clamped to [0, 1]
    colors_pre: np.ndarray  # (V, 3) before clamping
    basis: np.ndarray  # (V, K)
    view_dirs: np.ndarray  # (V, 3)
    view_dist: np.ndarray  # (V,)
    half_extent: np.ndarray  # (V, 2) conservative cutoff-contour half extents, px
    proj: ProjectedSplats  # projection of the full scene
    background: np.ndarray


def _invert_cov2d(cov2d: np.ndarray) -> np.ndarray:
    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 0]
    d = cov2d[:, 1, 1]
    det = a * d - b * c
    lam = np.empty_like(cov2d)
    lam[:, 0, 0] = d / det
    lam[:, 0, 1] = -b / det
    lam[:, 1, 0] = -c / det
    lam[:, 1, 1] = a / det
    return lam


def _prepare(scene: Scene, camera: CameraPose, config: RenderConfig) -> _Prepared:
    _check_finite(scene)
    background = config.background if config.background is not None else scene.background

    proj = project_splats(
        scene.means, scene.scales_raw, scene.rotations_raw, camera, config.near
    )
    sigma_all = expit(scene.opacities_raw)
    # sigma <= cutoff can never beat the alpha cutoff (g <= 1): drop outright.
    visible = proj.in_front & (sigma_all > config.alpha_cutoff)
    idx = np.nonzero(visible)[0]
    order = np.lexsort((idx, proj.depth[idx]))
    idx = idx[order]

    mean2d = proj.mean2d[idx]
    cov2d = proj.cov2d[idx]
    sigma = sigma_all[idx]
    lam = _invert_cov2d(cov2d)

    cam_center = camera.camera_center()
    offsets = scene.means[idx] - cam_center
    dist = np.linalg.norm(offsets, axis=1)
    view_dirs = offsets / dist[:, None]
    basis = sh_basis(view_dirs, scene.sh_degree)
    colors_pre = 0.5 + np.einsum("vk,vkc->vc", basis, scene.sh[idx])
    colors = np.clip(colors_pre, 0.0, 1.0)

    # Exact conservative bound: a = sigma * exp(-q/2) >= cutoff implies
    # q <= 2 ln(sigma / cutoff); the bounding box of that ellipse has half
    # extents sqrt(q_max * diag(cov2d)).
    q_max = 2.0 * np.log(sigma / config.alpha_cutoff)
    half_x = np.sqrt(q_max * cov2d[:, 0, 0]) + 1e-9
    half_y = np.sqrt(q_max * cov2d[:, 1, 1]) + 1e-9
    half_extent = np.stack([half_x, half_y], axis=1)

    return _Prepared(
        indices=idx,
        mean2d=mean2d,
        lam=lam,
        sigma=sigma,
        colors=colors,
        colors_pre=colors_pre,
        basis=basis,
        view_dirs=view_dirs,
        view_dist=dist,
        half_extent=half_extent,
        proj=proj,
        background=np.asarray(background, dtype=np.float64),
    )


def _pixel_centers(x0: int, x1: int, y0: int, y1: int) -> np.ndarray:
    xs = np.arange(x0, x1) + 0.5
    ys = np.arange(y0, y1) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


@dataclass
class _CompositeState:
    """Per-(pixel, splat) intermediates reused by the backward pass."""

    dx: np.ndarray  # (P, G) pixel offsets from the projected means
    dy: np.ndarray  # (P, G)
    gauss: np.ndarray  # (P, G)
    alpha: np.ndarray  # (P, G) after clamping, zeroed below cutoff
    unclamped: np.ndarray  # (P, G) bool, True where the 0.99 clamp is inactive
    t_before: np.ndarray  # (P, G)
    include: np.ndarray  # (P, G) bool, transmittance-floor prefix
    weights: np.ndarray  # (P, G)
    t_end: np.ndarray  # (P,)


def _composite(
    pix: np.ndarray,
    mean2d: np.ndarray,
    lam: np.ndarray,
    sigma: np.ndarray,
    config: RenderConfig,
) -> _CompositeState:
    # The 2x2 quadratic form is expanded componentwise; einsum overhead
    # dominates at tile granularity.
    dx = pix[:, 0:1] - mean2d[None, :, 0]
    dy = pix[:, 1:2] - mean2d[None, :, 1]
    la, lb, lc = lam[:, 0, 0], lam[:, 0, 1], lam[:, 1, 1]
    q = la * dx * dx + 2.0 * lb * dx * dy + lc * dy * dy
    gauss = np.exp(-0.5 * q)
    alpha_raw = sigma[None, :] * gauss
    unclamped = alpha_raw < ALPHA_MAX
    alpha = np.minimum(alpha_raw, ALPHA_MAX)
    alpha = np.where(alpha >= config.alpha_cutoff, alpha, 0.0)

    t_after = np.cumprod(1.0 - alpha, axis=1)
    t_before = np.concatenate([np.ones((pix.shape[0], 1)), t_after[:, :-1]], axis=1)
    include = t_before >= config.transmittance_floor
    weights = alpha * t_before * include

    n_included = include.sum(axis=1)
    if mean2d.shape[0] == 0:
        t_end = np.ones(pix.shape[0])
    else:
        t_end = np.where(
            n_included > 0,
            t_after[np.arange(pix.shape[0]), np.maximum(n_included - 1, 0)],
            1.0,
        )
    return _CompositeState(dx, dy, gauss, alpha, unclamped, t_before, include, weights, t_end)


def _tile_ranges(extent: int, tile: int):
    for lo in range(0, extent, tile):
        yield lo, min(lo + tile, extent)


def _tile_splat_mask(prep: _Prepared, x0, x1, y0, y1) -> np.ndarray:
    cx_lo, cx_hi = x0 + 0.5, x1 - 0.5
    cy_lo, cy_hi = y0 + 0.5, y1 - 0.5
    return (
        (prep.mean2d[:, 0] - prep.half_extent[:, 0] <= cx_hi)
        & (prep.mean2d[:, 0] + prep.half_extent[:, 0] >= cx_lo)
        & (prep.mean2d[:, 1] - prep.half_extent[:, 1] <= cy_hi)
        & (prep.mean2d[:, 1] + prep.half_extent[:, 1] >= cy_lo)
    )


def render(scene: Scene, camera: CameraPose, config: RenderConfig | None = None) -> RenderedFrame:
    """Tile-based forward render of a scene against one camera."""
    config = config or RenderConfig()
    prep = _prepare(scene, camera, config)
    h, w = camera.height, camera.width
    rgb = np.empty((h, w, 3))
    alpha = np.empty((h, w))
    count = np.zeros((h, w), dtype=np.int64)

    for y0, y1 in _tile_ranges(h, config.tile_size):
        for x0, x1 in _tile_ranges(w, config.tile_size):
            sel = np.nonzero(_tile_splat_mask(prep, x0, x1, y0, y1))[0]
            pix = _pixel_centers(x0, x1, y0, y1)
            state = _composite(pix, prep.mean2d[sel], prep.lam[sel], prep.sigma[sel], config)
            tile_rgb = state.weights @ prep.colors[sel] + state.t_end[:, None] * prep.background
            shape = (y1 - y0, x1 - x0)
            rgb[y0:y1, x0:x1] = np.clip(tile_rgb, 0.0, 1.0).reshape(shape + (3,))
            alpha[y0:y1, x0:x1] = (1.0 - state.t_end).reshape(shape)
            count[y0:y1, x0:x1] = ((state.alpha > 0) & state.include).sum(axis=1).reshape(shape)

    return RenderedFrame(rgb, np.clip(alpha, 0.0, 1.0), count)


def render_reference(
    scene: Scene, camera: CameraPose, config: RenderConfig | None = None
) -> RenderedFrame:
    """Brute-force renderer: global depth sort, every splat tested at every pixel.

    Exists solely as an equivalence oracle for the tiled path.
    """
    config = config or RenderConfig()
    prep = _prepare(scene, camera, config)
    h, w = camera.height, camera.width
    pix = _pixel_centers(0, w, 0, h)
    state = _composite(pix, prep.mean2d, prep.lam, prep.sigma, config)
    rgb = state.weights @ prep.colors + state.t_end[:, None] * prep.background
    alpha = 1.0 - state.t_end
    count = ((state.alpha > 0) & state.include).sum(axis=1)
    return RenderedFrame(
        np.clip(rgb, 0.0, 1.0).reshape(h, w, 3),
        np.clip(alpha, 0.0, 1.0).reshape(h, w),
        count.reshape(h, w).astype(np.int64),
    )


# ---------------------------------------------------------------------------
# backward


def _quat_rotmat_partials(q: np.ndarray) -> np.ndarray:
    """(V, 4, 3, 3) partials of the rotation matrix w.r.t. unit quaternion parts."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    n = q.shape[0]
    dr = np.zeros((n, 4, 3, 3))
    # dR/dw
    dr[:, 0, 0, 1] = -2 * z
    dr[:, 0, 0, 2] = 2 * y
    dr[:, 0, 1, 0] = 2 * z
    dr[:, 0, 1, 2] = -2 * x
    dr[:, 0, 2, 0] = -2 * y
    dr[:, 0, 2, 1] = 2 * x
    # dR/dx
    dr[:, 1, 0, 1] = 2 * y
    dr[:, 1, 0, 2] = 2 * z
    dr[:, 1, 1, 0] = 2 * y
    dr[:, 1, 1, 1] = -4 * x
    dr[:, 1, 1, 2] = -2 * w
    dr[:, 1, 2, 0] = 2 * z
    dr[:, 1, 2, 1] = 2 * w
    dr[:, 1, 2, 2] = -4 * x
    # dR/dy
    dr[:, 2, 0, 0] = -4 * y
    dr[:, 2, 0, 1] = 2 * x
    dr[:, 2, 0, 2] = 2 * w
    dr[:, 2, 1, 0] = 2 * x
    dr[:, 2, 1, 2] = 2 * z
    dr[:, 2, 2, 0] = -2 * w
    dr[:, 2, 2, 1] = 2 * z
    dr[:, 2, 2, 2] = -4 * y
    # dR/dz
    dr[:, 3, 0, 0] = -4 * z
    dr[:, 3, 0, 1] = -2 * w
    dr[:, 3, 0, 2] = 2 * x
    dr[:, 3, 1, 0] = 2 * w
    dr[:, 3, 1, 1] = -4 * z
    dr[:, 3, 1, 2] = 2 * y
    dr[:, 3, 2, 0] = 2 * x
    dr[:, 3, 2, 1] = 2 * y
    return dr


def render_backward(
    scene: Scene,
    camera: CameraPose,
    config: RenderConfig,
    upstream: np.ndarray,
) -> GradientBuffer:
    """Analytic gradients of sum(upstream * rgb) w.r.t. every raw splat parameter.

    The forward pass is recomputed tile by tile rather than storing per-pixel
    contributor lists; per-tile partial gradients are reduced in tile order so
    the accumulation is deterministic.

    Args:
        scene: Scene used in the forward pass.
        camera: Camera used in the forward pass.
        config: Render configuration used in the forward pass.
        upstream: (H, W, 3) gradient of the loss w.r.t. the rendered rgb.

    Returns:
        GradientBuffer over raw (stored) parameters, chain rule through
        exp / sigmoid / quaternion normalization included.
    """
    config = config or RenderConfig()
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (camera.height, camera.width, 3):
        raise ShapeMismatchError(
            f"upstream shape {upstream.shape} does not match render resolution "
            f"({camera.height}, {camera.width}, 3)"
        )
    if not np.all(np.isfinite(upstream)):
        raise RenderError("upstream gradient contains non-finite values")

    prep = _prepare(scene, camera, config)
    nvis = prep.indices.shape[0]
    grads = GradientBuffer.zeros(scene)
    if nvis == 0:
        return grads

    # Per-visible-splat accumulators in screen space.
    g_color = np.zeros((nvis, 3))
    g_mean2d = np.zeros((nvis, 2))
    g_lam = np.zeros((nvis, 2, 2))
    g_sigma = np.zeros(nvis)

    bg = prep.background
    for y0, y1 in _tile_ranges(camera.height, config.tile_size):
        for x0, x1 in _tile_ranges(camera.width, config.tile_size):
            sel = np.nonzero(_tile_splat_mask(prep, x0, x1, y0, y1))[0]
            if sel.size == 0:
                continue
            pix = _pixel_centers(x0, x1, y0, y1)
            up = upstream[y0:y1, x0:x1].reshape(-1, 3)
            state = _composite(pix, prep.mean2d[sel], prep.lam[sel], prep.sigma[sel], config)

            colors = prep.colors[sel]
            g_color[sel] += state.weights.T @ up

            # dL/dalpha_j = u . (c_j T_j - (suffix colors + T_end bg) / (1 - a_j));
            # contracting colors with the upstream first turns the rgb suffix
            # sums into a single scalar reverse cumsum per (pixel, splat).
            color_dot_up = up @ colors.T  # (P, G)
            contrib = state.weights * color_dot_up
            suffix = np.cumsum(contrib[:, ::-1], axis=1)[:, ::-1] - contrib
            rest = suffix + (state.t_end * (up @ bg))[:, None]
            active = (state.alpha > 0) & state.include
            dl_dalpha = (
                color_dot_up * state.t_before - rest / (1.0 - state.alpha)
            ) * active

            # alpha = sigma * gauss where the 0.99 clamp is inactive.
            live = dl_dalpha * state.unclamped
            g_sigma[sel] += (live * state.gauss).sum(axis=0)
            dl_dq = -0.5 * state.gauss * (live * prep.sigma[sel][None, :])
            lam_t = prep.lam[sel]
            la, lb, lc = lam_t[:, 0, 0], lam_t[:, 0, 1], lam_t[:, 1, 1]
            vx = la * state.dx + lb * state.dy
            vy = lb * state.dx + lc * state.dy
            g_mean2d[sel, 0] += -2.0 * (dl_dq * vx).sum(axis=0)
            g_mean2d[sel, 1] += -2.0 * (dl_dq * vy).sum(axis=0)
            lam_xx = (dl_dq * state.dx * state.dx).sum(axis=0)
            lam_xy = (dl_dq * state.dx * state.dy).sum(axis=0)
            lam_yy = (dl_dq * state.dy * state.dy).sum(axis=0)
            g_lam[sel, 0, 0] += lam_xx
            g_lam[sel, 0, 1] += lam_xy
            g_lam[sel, 1, 0] += lam_xy
            g_lam[sel, 1, 1] += lam_yy

    # --- chain rule back to raw parameters (vectorized over visible splats) ---
    idx = prep.indices
    proj = prep.proj
    lam = prep.lam
    g_cov2d = -np.einsum("gij,gjk,gkl->gil", lam, g_lam, lam)

    # Color path: clamp mask, SH coefficients, and view-direction dependence.
    interior = (prep.colors_pre > 0.0) & (prep.colors_pre < 1.0)
    g_cpre = g_color * interior
    grads.sh[idx] = np.einsum("vk,vc->vkc", prep.basis, g_cpre)
    dbasis = sh_basis_gradient(prep.view_dirs, scene.sh_degree)
    g_dir = np.einsum("vc,vkc,vkd->vd", g_cpre, scene.sh[idx], dbasis)
    # d(normalize(m - o))/dm = (I - dir dir^T) / dist
    g_mean_dir = (
        g_dir - prep.view_dirs * np.einsum("vd,vd->v", prep.view_dirs, g_dir)[:, None]
    ) / prep.view_dist[:, None]

    # Projection path: mean2d and the Jacobian entries both depend on t_cam.
    jac = proj.jacobian[idx]
    t_cam = proj.t_cam[idx]
    cov_cam = proj.cov_cam[idx]
    g_tcam = np.einsum("va,vab->vb", g_mean2d, jac)

    g_jac = 2.0 * np.einsum("vab,vbi,vij->vaj", g_cov2d, jac, cov_cam)
    fx, fy = camera.fx, camera.fy
    zc = t_cam[:, 2]
    z2 = zc * zc
    z3 = z2 * zc
    g_tcam[:, 0] += g_jac[:, 0, 2] * (-fx / z2)
    g_tcam[:, 1] += g_jac[:, 1, 2] * (-fy / z2)
    g_tcam[:, 2] += (
        g_jac[:, 0, 0] * (-fx / z2)
        + g_jac[:, 0, 2] * (2.0 * fx * t_cam[:, 0] / z3)
        + g_jac[:, 1, 1] * (-fy / z2)
        + g_jac[:, 1, 2] * (2.0 * fy * t_cam[:, 1] / z3)
    )

    rot_wc = proj.rot_wc
    grads.mean[idx] = g_tcam @ rot_wc + g_mean_dir

    # Covariance path: cov2d -> camera-space cov -> world cov -> (R, S).
    g_cov_cam = np.einsum("vai,vab,vbj->vij", jac, g_cov2d, jac)
    g_cov3d = np.einsum("ai,vab,bj->vij", rot_wc, g_cov_cam, rot_wc)

    norms = np.linalg.norm(scene.rotations_raw[idx], axis=1)
    qhat = scene.rotations_raw[idx] / norms[:, None]
    rmats = quats_to_rotmats(qhat)
    scales = np.exp(scene.scales_raw[idx])
    a_mat = rmats * scales[:, None, :]
    g_a = 2.0 * np.einsum("vij,vjk->vik", g_cov3d, a_mat)
    g_rot = g_a * scales[:, None, :]
    g_scale = np.einsum("vij,vij->vj", g_a, rmats)
    grads.scale_raw[idx] = g_scale * scales

    dr = _quat_rotmat_partials(qhat)
    g_qhat = np.einsum("vij,vkij->vk", g_rot, dr)
    g_quat = (g_qhat - qhat * np.einsum("vk,vk->v", qhat, g_qhat)[:, None]) / norms[:, None]
    grads.rotation_raw[idx] = g_quat

    grads.opacity_raw[idx] = g_sigma * prep.sigma * (1.0 - prep.sigma)
    return grads
