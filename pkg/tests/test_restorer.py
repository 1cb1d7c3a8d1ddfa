"""Restorer-boundary tests: backend contracts and the directory protocol."""

from __future__ import annotations

import threading

import numpy as np
import pytest

from conftest import make_camera
from resplat.restorer import (
    STATUS_FAILED,
    STATUS_OK,
    BlendBackend,
    IdentityBackend,
    OracleBackend,
    RemoteBackend,
    RestorationRequest,
    backend_from_spec,
    job_directory,
    restore,
    serve_echo_once,
)


def make_request(rng, n_frames=3, size=12, scene_id="scene", round_index=1):
    frames = [rng.uniform(size=(size, size, 3)) for _ in range(n_frames)]
    frame_poses = [make_camera(width=size, height=size, pose_id=f"novel_{i}") for i in range(n_frames)]
    refs = [rng.uniform(size=(size, size, 3)) for _ in range(2)]
    ref_poses = [make_camera(width=size, height=size, pose_id=f"ref_{i}") for i in range(2)]
    return RestorationRequest(scene_id, round_index, frames, frame_poses, refs, ref_poses)


def test_request_invariants():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        RestorationRequest("s", 0, [rng.uniform(size=(4, 4, 3))], [], [], [])
    with pytest.raises(ValueError):
        make_request(rng).__class__(
            "s", 0, [], [], [rng.uniform(size=(4, 4, 3))], [make_camera(pose_id="r")]
        )


def test_identity_backend_is_bitwise(rng):
    request = make_request(rng)
    response = restore(request, IdentityBackend())
    assert response.status == STATUS_OK
    for fixed, orig in zip(response.fixed_frames, request.frames):
        np.testing.assert_array_equal(fixed, orig)


def test_oracle_backend_returns_ground_truth(rng):
    request = make_request(rng)
    gt = {p.pose_id: rng.uniform(size=f.shape) for p, f in zip(request.frame_poses, request.frames)}
    response = restore(request, OracleBackend(gt))
    assert response.status == STATUS_OK
    for fixed, pose in zip(response.fixed_frames, request.frame_poses):
        np.testing.assert_array_equal(fixed, gt[pose.pose_id])


def test_oracle_missing_pose_fails_naming_it(rng):
    request = make_request(rng)
    gt = {request.frame_poses[0].pose_id: request.frames[0]}
    response = restore(request, OracleBackend(gt))
    assert response.status == STATUS_FAILED
    assert "novel_1" in response.detail


def test_blend_endpoints_and_bounds(rng):
    request = make_request(rng)
    gt = {p.pose_id: rng.uniform(size=f.shape) for p, f in zip(request.frame_poses, request.frames)}
    at_one = restore(request, BlendBackend(1.0, gt))
    oracle = restore(request, OracleBackend(gt))
    for a, b in zip(at_one.fixed_frames, oracle.fixed_frames):
        np.testing.assert_allclose(a, b, atol=1e-15)
    at_zero = restore(request, BlendBackend(0.0, gt))
    for a, b in zip(at_zero.fixed_frames, request.frames):
        np.testing.assert_allclose(a, b, atol=1e-15)
    mid = restore(request, BlendBackend(0.4, gt))
    for fixed, frame, pose in zip(mid.fixed_frames, request.frames, request.frame_poses):
        lo = np.minimum(frame, gt[pose.pose_id])
        hi = np.maximum(frame, gt[pose.pose_id])
        assert np.all(fixed >= lo - 1e-12) and np.all(fixed <= hi + 1e-12)
    with pytest.raises(ValueError):
        BlendBackend(1.5, gt)


def test_restore_preserves_count_order_resolution(rng):
    request = make_request(rng, n_frames=4)
    response = restore(request, IdentityBackend())
    assert len(response.fixed_frames) == 4
    for fixed, orig in zip(response.fixed_frames, request.frames):
        assert fixed.shape == orig.shape


def test_remote_roundtrip_through_echo_server(tmp_path, rng):
    request = make_request(rng, scene_id="loop", round_index=2)
    echo = threading.Thread(target=serve_echo_once, args=(tmp_path, "loop", 2))
    echo.start()
    backend = RemoteBackend(root=tmp_path, poll_interval=0.05, timeout=20.0)
    response = restore(request, backend)
    echo.join()
    assert response.status == STATUS_OK

    # Byte-compare: the echoed PNG files are identical to the request files.
    job = job_directory(tmp_path, "loop", 2)
    for i in range(len(request.frames)):
        sent = (job / "in" / f"frame_{i:03d}.png").read_bytes()
        received = (job / "out" / f"fixed_frame_{i:03d}.png").read_bytes()
        assert sent == received

    # In the quantized 8-bit domain the round trip is lossless.
    for fixed, orig in zip(response.fixed_frames, request.frames):
        np.testing.assert_array_equal(fixed, np.round(orig * 255.0) / 255.0)


def test_remote_timeout_fails(tmp_path, rng):
    request = make_request(rng, scene_id="silent", round_index=0)
    backend = RemoteBackend(root=tmp_path, poll_interval=0.02, timeout=0.15)
    response = restore(request, backend)
    assert response.status == STATUS_FAILED
    assert "no response" in response.detail


def test_backend_from_spec(tmp_path, rng):
    assert isinstance(backend_from_spec("identity"), IdentityBackend)
    assert isinstance(backend_from_spec(f"remote:{tmp_path}"), RemoteBackend)
    from resplat.io import save_png

    gt_dir = tmp_path / "gt"
    gt_dir.mkdir()
    save_png(gt_dir / "novel_0.png", rng.uniform(size=(8, 8, 3)))
    oracle = backend_from_spec(f"oracle:{gt_dir}")
    assert isinstance(oracle, OracleBackend)
    blend = backend_from_spec(f"blend:0.5:{gt_dir}")
    assert isinstance(blend, BlendBackend) and blend.beta == 0.5
    with pytest.raises(ValueError):
        backend_from_spec("diffusion")
