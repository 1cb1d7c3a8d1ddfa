"""Backward-pass tests: finite-difference oracle, occlusion, shape errors."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import make_camera
from resplat.errors import ShapeMismatchError
from resplat.gradcheck import (
    finite_difference_gradients,
    gradcheck,
    random_camera,
    random_scene,
    relative_errors,
)
from resplat.raster import GradientBuffer, RenderConfig, render_backward
from resplat.scene import GaussianSplat, Scene

IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


def test_zero_upstream_gives_zero_gradients():
    scene = random_scene(0, n_splats=8)
    cam = random_camera(16)
    grads = render_backward(scene, cam, RenderConfig(), np.zeros((16, 16, 3)))
    for arr in grads.groups().values():
        np.testing.assert_array_equal(arr, np.zeros_like(arr))


def test_gradients_match_finite_differences():
    errs = gradcheck(seed=11, n_splats=12, resolution=16)
    assert max(errs.values()) < 1e-3, errs


def test_gradcheck_covers_sh_degree_3():
    errs = gradcheck(seed=5, n_splats=6, resolution=16, sh_degree=3)
    assert max(errs.values()) < 1e-3, errs


def test_occluded_splat_opacity_gradient_vanishes():
    # Three stacked alpha = 0.99 walls drive transmittance to 1e-6, below the
    # default floor: compositing stops and the hidden splat's opacity gradient
    # is exactly zero.
    def wall(depth):
        return GaussianSplat(
            mean=np.array([0.0, 0.0, depth]),
            scale_raw=np.full(3, np.log(10.0 * depth)),
            rotation_raw=IDENTITY_Q,
            opacity_raw=40.0,
            sh=np.zeros((1, 3)),
        )

    hidden = GaussianSplat(
        mean=np.array([0.0, 0.0, 4.0]),
        scale_raw=np.full(3, np.log(4.0)),
        rotation_raw=IDENTITY_Q,
        opacity_raw=0.0,
        sh=np.zeros((1, 3)),
    )
    scene = Scene.from_splats([wall(1.0), wall(2.0), wall(3.0), hidden], 0)
    cam = make_camera(width=16, height=16, fx=30.0)
    upstream = np.ones((16, 16, 3))
    grads = render_backward(scene, cam, RenderConfig(), upstream)
    assert abs(grads.opacity_raw[3]) < 1e-6


def test_upstream_shape_mismatch_raises():
    scene = random_scene(0, n_splats=3)
    cam = random_camera(16)
    with pytest.raises(ShapeMismatchError):
        render_backward(scene, cam, RenderConfig(), np.zeros((8, 8, 3)))


def test_gradient_buffer_shape_matches_scene():
    scene = random_scene(1, n_splats=4, sh_degree=2)
    buf = GradientBuffer.zeros(scene)
    assert buf.mean.shape == (4, 3)
    assert buf.sh.shape == (4, 9, 3)


def test_backward_matches_fd_with_default_config_smooth_case():
    # With well-separated opaque splats the default cutoff/floor thresholds are
    # far from any crossing and the default-config gradient also verifies.
    scene = random_scene(21, n_splats=5)
    cam = random_camera(16)
    rng = np.random.default_rng(3)
    upstream = rng.normal(size=(16, 16, 3))
    config = RenderConfig()
    analytic = render_backward(scene, cam, config, upstream)
    numeric = finite_difference_gradients(scene, cam, config, upstream, h=1e-5)
    errs = relative_errors(analytic, numeric)
    assert max(errs.values()) < 5e-3, errs
