"""Optimizer tests: adaptive-moment updates and densify/prune maintenance."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.special import expit, logit

from resplat.gradcheck import random_scene
from resplat.optim import (
    ADAM_BETA1,
    ADAM_BETA2,
    AdamState,
    TrainConfig,
    densify_and_prune,
    optimize_step,
)
from resplat.raster import GradientBuffer
from resplat.scene import GaussianSplat, Scene

IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


def unit_quat_scene(n=4, seed=0):
    scene = random_scene(seed, n_splats=n)
    scene.rotations_raw /= np.linalg.norm(scene.rotations_raw, axis=1, keepdims=True)
    return scene


def test_zero_gradients_leave_parameters_unchanged():
    scene = unit_quat_scene()
    out, state = optimize_step(scene, GradientBuffer.zeros(scene), None, TrainConfig())
    # Unchanged up to the 1-ulp wiggle of renormalizing already-unit quaternions.
    assert scene.allclose(out, atol=1e-15)
    assert state.step == 1


def test_zero_gradient_step_decays_moments():
    scene = unit_quat_scene()
    state = AdamState.for_scene(scene)
    state.m["mean"][:] = 1.0
    state.v["mean"][:] = 1.0
    _, state = optimize_step(scene, GradientBuffer.zeros(scene), state, TrainConfig())
    np.testing.assert_allclose(state.m["mean"], ADAM_BETA1)
    np.testing.assert_allclose(state.v["mean"], ADAM_BETA2)


def test_constant_gradient_step_magnitude_approaches_lr():
    # Scalar oracle: with bias correction and a constant gradient, the update
    # magnitude equals the learning rate (up to eps) at every step.
    config = TrainConfig(lr_opacity=0.01)
    scene = unit_quat_scene(n=1)
    grads = GradientBuffer.zeros(scene)
    grads.opacity_raw[0] = 3.7
    state = None
    prev = scene.opacities_raw[0]
    scene_t = scene
    for _ in range(50):
        scene_t, state = optimize_step(scene_t, grads, state, config)
        step = prev - scene_t.opacities_raw[0]
        assert step == pytest.approx(0.01, rel=1e-9)
        prev = scene_t.opacities_raw[0]


def test_step_renormalizes_quaternions(rng):
    scene = random_scene(3, n_splats=6)
    grads = GradientBuffer.zeros(scene)
    grads.rotation_raw = rng.normal(size=(6, 4))
    out, _ = optimize_step(scene, grads, None, TrainConfig())
    np.testing.assert_allclose(np.linalg.norm(out.rotations_raw, axis=1), 1.0, atol=1e-9)


def test_step_preserves_scene_invariants(rng):
    scene = unit_quat_scene(n=10, seed=5)
    grads = GradientBuffer.zeros(scene)
    for name, arr in grads.groups().items():
        arr += rng.normal(size=arr.shape)
    out, _ = optimize_step(scene, grads, None, TrainConfig())
    assert np.all(np.exp(out.scales_raw) > 0)
    assert np.all((expit(out.opacities_raw) > 0) & (expit(out.opacities_raw) < 1))
    np.testing.assert_allclose(np.linalg.norm(out.rotations_raw, axis=1), 1.0, atol=1e-9)


# ---------------------------------------------------------------------------
# densify / prune


def make_scene(opacities, scales, n=None):
    n = n or len(opacities)
    splats = [
        GaussianSplat(
            mean=np.array([i, 0.0, 2.0]),
            scale_raw=np.full(3, np.log(scales[i])),
            rotation_raw=IDENTITY_Q,
            opacity_raw=float(logit(opacities[i])),
            sh=np.zeros((1, 3)),
        )
        for i in range(n)
    ]
    return Scene.from_splats(splats, 0)


def test_densify_noop_below_threshold_still_prunes():
    scene = make_scene([0.5, 0.001, 0.5], [0.01, 0.01, 0.01])
    config = TrainConfig(densify_grad_threshold=1.0, prune_opacity_threshold=0.005)
    out = densify_and_prune(scene, np.zeros(3), config)
    assert len(out) == 2  # faint splat pruned, nothing densified
    np.testing.assert_array_equal(out.means[:, 0], [0.0, 2.0])


def test_split_replaces_large_splat_with_two_shrunk_copies():
    scene = make_scene([0.9, 0.9], [0.5, 0.01])
    config = TrainConfig(
        densify_grad_threshold=0.1, densify_scale_threshold=0.05, prune_opacity_threshold=0.005
    )
    out = densify_and_prune(scene, np.array([1.0, 0.0]), config)
    assert len(out) == 3  # splat 0 replaced by two, splat 1 kept
    new_scales = np.sort(out.scales_raw[:, 0])
    expected = np.log(0.5) - np.log(1.6)
    np.testing.assert_allclose(new_scales[1:], expected, atol=1e-12)
    assert new_scales[0] == pytest.approx(np.log(0.01))


def test_clone_duplicates_small_splat():
    scene = make_scene([0.9], [0.01])
    config = TrainConfig(densify_grad_threshold=0.1, densify_scale_threshold=0.05)
    out = densify_and_prune(scene, np.array([1.0]), config)
    assert len(out) == 2
    np.testing.assert_array_equal(out.means[0], out.means[1])


def test_densify_respects_max_splats_cap():
    scene = make_scene([0.9, 0.9, 0.9], [0.01, 0.01, 0.01])
    config = TrainConfig(densify_grad_threshold=0.1, max_splats=3)
    out = densify_and_prune(scene, np.full(3, 1.0), config)
    assert len(out) == 3
