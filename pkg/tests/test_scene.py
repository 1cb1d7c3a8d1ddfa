"""Tests for Gaussian primitives, SH evaluation, and projection."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_camera
from resplat.errors import InvalidPrimitiveError, ShapeMismatchError
from resplat.scene import (
    CameraPose,
    GaussianSplat,
    Scene,
    build_covariance,
    build_covariances,
    eval_sh,
    project_gaussian,
    project_splats,
    quat_to_rotmat,
    rotmat_to_quat,
    sh_basis,
    sh_basis_gradient,
)

IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


def random_unit_quaternion(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


# ---------------------------------------------------------------------------
# build_covariance


def test_covariance_identity():
    cov = build_covariance(np.zeros(3), IDENTITY_Q)
    np.testing.assert_allclose(cov, np.eye(3), atol=1e-15)


def test_covariance_axis_aligned_scales():
    cov = build_covariance(np.array([np.log(2.0), 0.0, 0.0]), IDENTITY_Q)
    np.testing.assert_allclose(cov, np.diag([4.0, 1.0, 1.0]), atol=1e-12)


def test_covariance_eigenvalues_match_squared_scales(rng):
    # Oracle: eigendecomposition of R S S^T R^T must recover the squared scales.
    a, b, c = 0.7, 1.3, 2.9
    for _ in range(10):
        q = random_unit_quaternion(rng)
        cov = build_covariance(np.log([a, b, c]), q)
        eig = np.sort(np.linalg.eigvalsh(cov))
        np.testing.assert_allclose(eig, np.sort([a**2, b**2, c**2]), atol=1e-9)


def test_covariance_degenerate_quaternion_raises():
    with pytest.raises(InvalidPrimitiveError):
        build_covariance(np.zeros(3), np.zeros(4))
    with pytest.raises(InvalidPrimitiveError):
        build_covariances(np.zeros((1, 3)), np.full((1, 4), 1e-13))


@settings(max_examples=50, deadline=None)
@given(
    qw=st.floats(-2, 2),
    qx=st.floats(-2, 2),
    qy=st.floats(-2, 2),
    qz=st.floats(-2, 2),
    s0=st.floats(-2, 1),
    s1=st.floats(-2, 1),
    s2=st.floats(-2, 1),
)
def test_covariance_symmetric_positive_definite(qw, qx, qy, qz, s0, s1, s2):
    q = np.array([qw, qx, qy, qz])
    if np.linalg.norm(q) <= 1e-6:
        return
    cov = build_covariance(np.array([s0, s1, s2]), q)
    assert np.max(np.abs(cov - cov.T)) < 1e-12
    assert np.all(np.linalg.eigvalsh(cov) > 0)
    # Quaternion sign invariance: q and -q encode the same rotation.
    cov_neg = build_covariance(np.array([s0, s1, s2]), -q)
    np.testing.assert_array_equal(cov, cov_neg)


def test_build_covariances_matches_scalar_path(rng):
    scales = rng.uniform(-1, 0.5, size=(8, 3))
    quats = rng.normal(size=(8, 4))
    batch = build_covariances(scales, quats)
    for i in range(8):
        np.testing.assert_allclose(batch[i], build_covariance(scales[i], quats[i]), atol=1e-14)


def test_quat_rotmat_roundtrip(rng):
    for _ in range(20):
        q = random_unit_quaternion(rng)
        r = quat_to_rotmat(q)
        q2 = rotmat_to_quat(r)
        # Same rotation up to sign.
        assert min(np.linalg.norm(q - q2), np.linalg.norm(q + q2)) < 1e-12


# ---------------------------------------------------------------------------
# eval_sh


def test_eval_sh_degree0_zero_coeffs_is_half():
    rgb = eval_sh(np.zeros((1, 3)), np.array([0.0, 0.0, 1.0]), 0)
    np.testing.assert_allclose(rgb, [0.5, 0.5, 0.5])


def test_eval_sh_degree0_direction_independent(rng):
    coeffs = rng.normal(size=(1, 3))
    d1 = rng.normal(size=3)
    d1 /= np.linalg.norm(d1)
    d2 = rng.normal(size=3)
    d2 /= np.linalg.norm(d2)
    np.testing.assert_array_equal(eval_sh(coeffs, d1, 0), eval_sh(coeffs, d2, 0))


def _reference_sh_basis_deg2(d):
    """Independent real-SH table built from closed-form constants."""
    x, y, z = d
    c0 = 0.5 * np.sqrt(1.0 / np.pi)
    c1 = np.sqrt(3.0 / (4.0 * np.pi))
    c2_xy = 0.5 * np.sqrt(15.0 / np.pi)
    c2_zz = 0.25 * np.sqrt(5.0 / np.pi)
    c2_xx_yy = 0.25 * np.sqrt(15.0 / np.pi)
    return np.array(
        [
            c0,
            -c1 * y,
            c1 * z,
            -c1 * x,
            c2_xy * x * y,
            -c2_xy * y * z,
            c2_zz * (3 * z * z - 1.0),
            -c2_xy * x * z,
            c2_xx_yy * (x * x - y * y),
        ]
    )


def test_eval_sh_degree2_matches_reference_table(rng):
    for _ in range(10):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        coeffs = rng.normal(size=(9, 3))
        expected = 0.5 + _reference_sh_basis_deg2(d) @ coeffs
        np.testing.assert_allclose(eval_sh(coeffs, d, 2), expected, atol=1e-9)


def test_eval_sh_coefficient_count_mismatch():
    with pytest.raises(ShapeMismatchError):
        eval_sh(np.zeros((4, 3)), np.array([0.0, 0.0, 1.0]), 0)


def test_sh_basis_gradient_matches_finite_differences(rng):
    h = 1e-6
    for degree in (1, 2, 3):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        grad = sh_basis_gradient(d, degree)
        for axis in range(3):
            dp = d.copy()
            dm = d.copy()
            dp[axis] += h
            dm[axis] -= h
            fd = (sh_basis(dp, degree) - sh_basis(dm, degree)) / (2 * h)
            np.testing.assert_allclose(grad[:, axis], fd, atol=1e-8)


# ---------------------------------------------------------------------------
# project_gaussian


def _tiny_splat(mean, sh_vals=(0.0, 0.0, 0.0)):
    return GaussianSplat(
        mean=np.asarray(mean, dtype=float),
        scale_raw=np.full(3, np.log(1e-3)),
        rotation_raw=IDENTITY_Q,
        opacity_raw=0.0,
        sh=np.array([sh_vals]),
    )


def test_project_on_axis_hits_principal_point():
    cam = make_camera(width=64, height=48, fx=100.0)
    proj = project_gaussian(_tiny_splat([0.0, 0.0, 1.0]), cam)
    assert proj is not None
    np.testing.assert_allclose(proj.mean2d, [cam.cx, cam.cy], atol=1e-12)
    assert proj.depth == pytest.approx(1.0)


def test_project_fx_scales_offset_linearly():
    cam1 = make_camera(width=64, height=64, fx=100.0)
    cam2 = CameraPose(
        rotation=IDENTITY_Q,
        translation=np.zeros(3),
        fx=200.0,
        fy=100.0,
        cx=cam1.cx,
        cy=cam1.cy,
        width=64,
        height=64,
        pose_id="cam2",
    )
    splat = _tiny_splat([0.05, 0.0, 1.0])
    off1 = project_gaussian(splat, cam1).mean2d[0] - cam1.cx
    off2 = project_gaussian(splat, cam2).mean2d[0] - cam2.cx
    assert off2 == pytest.approx(2.0 * off1)


def test_project_behind_camera_is_culled():
    cam = make_camera()
    assert project_gaussian(_tiny_splat([0.0, 0.0, -1.0]), cam) is None
    assert project_gaussian(_tiny_splat([0.0, 0.0, 0.005]), cam) is None  # inside near plane


def test_project_cov2d_matches_numerical_jacobian(rng):
    # Oracle: propagate the camera-space covariance through a finite-difference
    # Jacobian of the pinhole projection.
    from resplat.scene import COV2D_LOW_PASS, build_covariance

    cam = make_camera(width=64, height=64, fx=90.0)
    for _ in range(5):
        mean = rng.uniform(-0.5, 0.5, size=3) + np.array([0.0, 0.0, 3.0])
        scale_raw = rng.uniform(-3.0, -1.0, size=3)
        q = random_unit_quaternion(rng)
        splat = GaussianSplat(mean, scale_raw, q, 0.0, np.zeros((1, 3)))
        proj = project_gaussian(splat, cam)

        rot = cam.rotation_matrix()
        t_cam = rot @ mean + cam.translation

        def pinhole(t):
            return np.array(
                [cam.fx * t[0] / t[2] + cam.cx, cam.fy * t[1] / t[2] + cam.cy]
            )

        h = 1e-6
        jac_fd = np.zeros((2, 3))
        for axis in range(3):
            tp = t_cam.copy()
            tm = t_cam.copy()
            tp[axis] += h
            tm[axis] -= h
            jac_fd[:, axis] = (pinhole(tp) - pinhole(tm)) / (2 * h)

        cov_cam = rot @ build_covariance(scale_raw, q) @ rot.T
        expected = jac_fd @ cov_cam @ jac_fd.T + COV2D_LOW_PASS * np.eye(2)
        np.testing.assert_allclose(proj.cov2d, expected, rtol=1e-4, atol=1e-10)


def test_projection_depth_ordering_matches_camera_z(rng):
    cam = make_camera()
    means = rng.uniform(-1, 1, size=(20, 3)) + np.array([0, 0, 4.0])
    proj = project_splats(means, np.full((20, 3), -2.0), np.tile(IDENTITY_Q, (20, 1)), cam)
    z = cam.world_to_camera(means)[:, 2]
    np.testing.assert_array_equal(np.argsort(proj.depth), np.argsort(z))


# ---------------------------------------------------------------------------
# type invariants


def test_camera_pose_validation():
    with pytest.raises(InvalidPrimitiveError):
        make_camera(rotation=(0.0, 0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        CameraPose(IDENTITY_Q, np.zeros(3), -1.0, 1.0, 0.0, 0.0, 8, 8)
    with pytest.raises(ValueError):
        CameraPose(IDENTITY_Q, np.zeros(3), 1.0, 1.0, 9.0, 0.0, 8, 8)
    cam = make_camera(rotation=(2.0, 0.0, 0.0, 0.0))
    assert np.linalg.norm(cam.rotation) == pytest.approx(1.0, abs=1e-9)


def test_splat_accessors_apply_activations():
    splat = GaussianSplat(np.zeros(3), np.log([0.1, 0.2, 0.3]), 2 * IDENTITY_Q, 0.0, np.zeros((1, 3)))
    np.testing.assert_allclose(splat.scale, [0.1, 0.2, 0.3])
    assert splat.opacity == pytest.approx(0.5)
    assert np.linalg.norm(splat.rotation) == pytest.approx(1.0)
    assert np.all(splat.scale > 0)
    assert 0.0 < splat.opacity < 1.0


def test_scene_sh_count_enforced():
    bad = GaussianSplat(np.zeros(3), np.zeros(3), IDENTITY_Q, 0.0, np.zeros((4, 3)))
    with pytest.raises(ShapeMismatchError):
        Scene.from_splats([bad], sh_degree=0)


def test_scene_copy_is_deep():
    scene = Scene.from_splats(
        [GaussianSplat(np.zeros(3), np.zeros(3), IDENTITY_Q, 0.0, np.zeros((1, 3)))], 0
    )
    other = scene.copy()
    other.means[0, 0] = 5.0
    assert scene.means[0, 0] == 0.0
    assert scene.allclose(scene.copy())
