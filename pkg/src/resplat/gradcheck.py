"""Finite-difference verification of the analytic rasterizer gradients.

The loss checked is L = sum(upstream * rgb), whose exact gradient is what
``render_backward`` returns.  Scenes are generated in a smooth regime (depths
well past the near plane, opacities below the 0.99 clamp, colors inside
(0, 1)) and the check runs with a near-zero alpha cutoff and transmittance
floor so the rendering function is differentiable at the evaluation point;
with the default thresholds a central difference straddling a cutoff measures
the (intended) skip discontinuity instead of the gradient.
"""

from __future__ import annotations

import numpy as np

from .raster import GradientBuffer, RenderConfig, render, render_backward
from .scene import CameraPose, Scene

# Smooth-regime configuration used for finite-difference comparisons.
GRADCHECK_CONFIG = RenderConfig(alpha_cutoff=1e-15, transmittance_floor=1e-12)

PARAM_GROUPS = ("mean", "scale_raw", "rotation_raw", "opacity_raw", "sh")


def random_camera(resolution: int, focal: float | None = None, pose_id: str = "gradcheck") -> CameraPose:
    """Axis-aligned camera at the origin looking down +z."""
    focal = focal if focal is not None else 1.25 * resolution
    return CameraPose(
        rotation=np.array([1.0, 0.0, 0.0, 0.0]),
        translation=np.zeros(3),
        fx=focal,
        fy=focal,
        cx=resolution / 2.0,
        cy=resolution / 2.0,
        width=resolution,
        height=resolution,
        pose_id=pose_id,
    )


def random_scene(
    seed: int,
    n_splats: int,
    sh_degree: int = 1,
    depth_range: tuple[float, float] = (2.5, 5.5),
    background=(0.25, 0.3, 0.35),
) -> Scene:
    """Seeded random scene filling the frustum of ``random_camera``.

    Parameter ranges keep the render smooth: opacities stay below the 0.99
    clamp and SH colors stay strictly inside (0, 1) for every direction.
    """
    rng = np.random.default_rng(seed)
    z = rng.uniform(*depth_range, size=n_splats)
    # Lateral extent ~80% of the frustum at fx = 1.25 * resolution.
    lateral = 0.32 * z
    means = np.stack(
        [rng.uniform(-1, 1, n_splats) * lateral, rng.uniform(-1, 1, n_splats) * lateral, z],
        axis=1,
    )
    scales_raw = rng.uniform(np.log(0.04), np.log(0.18), size=(n_splats, 3))
    rotations_raw = rng.normal(size=(n_splats, 4))
    opacities_raw = rng.uniform(-2.0, 2.0, size=n_splats)
    k = (sh_degree + 1) ** 2
    sh = rng.uniform(-0.15, 0.15, size=(n_splats, k, 3))
    sh[:, 0, :] = rng.uniform(-0.7, 0.7, size=(n_splats, 3))
    return Scene(means, scales_raw, rotations_raw, opacities_raw, sh, sh_degree, background)


def scalar_loss(scene: Scene, camera: CameraPose, config: RenderConfig, upstream: np.ndarray) -> float:
    return float(np.sum(upstream * render(scene, camera, config).rgb))


def finite_difference_gradients(
    scene: Scene,
    camera: CameraPose,
    config: RenderConfig,
    upstream: np.ndarray,
    h: float = 1e-4,
) -> GradientBuffer:
    """Central finite differences of the scalar loss over every raw parameter."""
    grads = GradientBuffer.zeros(scene)
    arrays = {
        "mean": scene.means,
        "scale_raw": scene.scales_raw,
        "rotation_raw": scene.rotations_raw,
        "opacity_raw": scene.opacities_raw,
        "sh": scene.sh,
    }
    out = grads.groups()
    for name, base in arrays.items():
        flat = base.reshape(-1)
        gflat = out[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = scalar_loss(scene, camera, config, upstream)
            flat[i] = orig - h
            lm = scalar_loss(scene, camera, config, upstream)
            flat[i] = orig
            gflat[i] = (lp - lm) / (2.0 * h)
    return grads


# Elements smaller than this are compared absolutely (at rtol * floor): a
# central difference at h = 1e-4 resolves gradients no finer than its own
# O(h^2) truncation, so a bare per-element ratio would flag truncation noise
# on near-zero entries as gradient error.
ABS_FLOOR = 1e-2


def relative_errors(analytic: GradientBuffer, numeric: GradientBuffer) -> dict[str, float]:
    """Max elementwise |a - f| / max(|a|, |f|, ABS_FLOOR) per parameter group."""
    errors = {}
    num = numeric.groups()
    for name, a in analytic.groups().items():
        f = num[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), ABS_FLOOR)
        errors[name] = float(np.max(np.abs(a - f) / denom)) if a.size else 0.0
    return errors


def gradcheck(
    seed: int,
    n_splats: int = 50,
    resolution: int = 32,
    sh_degree: int = 1,
    h: float = 1e-4,
    config: RenderConfig | None = None,
) -> dict[str, float]:
    """Run one seeded finite-difference comparison.

    Returns:
        Max relative error per parameter group.
    """
    config = config or GRADCHECK_CONFIG
    scene = random_scene(seed, n_splats, sh_degree)
    camera = random_camera(resolution)
    rng = np.random.default_rng(seed + 10_000)
    upstream = rng.normal(size=(resolution, resolution, 3))
    analytic = render_backward(scene, camera, config, upstream)
    numeric = finite_difference_gradients(scene, camera, config, upstream, h)
    return relative_errors(analytic, numeric)
