"""Pluggable restoration backends behind a frame-batch request/response contract.

The toolkit never implements the restoration network itself; it talks to a
backend that maps artifact-prone novel-view frames plus two clean reference
views to fixed frames.  Shipped backends:

* identity - returns the frames unchanged (no-information baseline).
* oracle   - returns ground-truth frames looked up by pose_id.
* blend    - beta * ground truth + (1 - beta) * artifact; a dial for
  studying how reconstruction quality scales with restorer fidelity.
* remote   - round-trips through a directory protocol so any external
  process (e.g. a GPU diffusion service) can participate: the request
  manifest and lossless PNG frames land in ``jobs/<scene_id>/<round>/in/``
  and the backend answers in the sibling ``out/`` directory.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol

import numpy as np

from .errors import RestorerError
from .io import load_png, read_json, save_png, write_json
from .scene import CameraPose

logger = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_PARTIAL = "partial"
STATUS_FAILED = "failed"

REQUEST_MANIFEST = "request.json"
RESPONSE_MANIFEST = "response.json"

DEFAULT_POLL_INTERVAL = 1.0
DEFAULT_TIMEOUT = 300.0


@dataclass
class RestorationRequest:
    """Frame batch sent to a restorer.

    Attributes:
        scene_id: Scene identifier (also the job-directory key).
        round_index: Iterative-reconstruction round the batch belongs to.
        frames: Artifact-prone novel-view renders, float rgb in [0, 1].
        frame_poses: Camera poses matching ``frames``.
        ref_images: Exactly two clean reference images.
        ref_poses: Poses of the two references.
    """

    scene_id: str
    round_index: int
    frames: list[np.ndarray]
    frame_poses: list[CameraPose]
    ref_images: list[np.ndarray]
    ref_poses: list[CameraPose]

    def __post_init__(self):
        if len(self.frames) != len(self.frame_poses):
            raise ValueError(
                f"{len(self.frames)} frames but {len(self.frame_poses)} frame poses"
            )
        if len(self.ref_images) != 2 or len(self.ref_poses) != 2:
            raise ValueError("requests carry exactly two reference images and poses")


@dataclass
class RestorationResponse:
    """Restorer output; on ok status the frames align 1:1 with the request."""

    fixed_frames: list[np.ndarray]
    backend: str
    status: str
    detail: str = ""


class RestorerBackend(Protocol):
    name: str

    def restore(self, request: RestorationRequest) -> RestorationResponse: ...


def restore(request: RestorationRequest, backend: RestorerBackend) -> RestorationResponse:
    """Dispatch a request and enforce the response contract on ok status."""
    response = backend.restore(request)
    if response.status == STATUS_OK:
        if len(response.fixed_frames) != len(request.frames):
            raise RestorerError(
                f"backend {response.backend} returned {len(response.fixed_frames)} frames "
                f"for a {len(request.frames)}-frame request"
            )
        for i, (fixed, orig) in enumerate(zip(response.fixed_frames, request.frames)):
            if fixed.shape != orig.shape:
                raise RestorerError(
                    f"backend {response.backend} changed frame {i} resolution "
                    f"{orig.shape} -> {fixed.shape}"
                )
    return response


@dataclass
class IdentityBackend:
    """Returns the artifact frames untouched."""

    name: str = "identity"

    def restore(self, request: RestorationRequest) -> RestorationResponse:
        return RestorationResponse([f.copy() for f in request.frames], self.name, STATUS_OK)


@dataclass
class OracleBackend:
    """Returns ground-truth frames looked up by pose_id."""

    ground_truth: Mapping[str, np.ndarray]
    name: str = "oracle"

    @classmethod
    def from_dir(cls, directory: str | Path) -> "OracleBackend":
        """Load <pose_id>.png ground-truth frames from a directory."""
        directory = Path(directory)
        store = {p.stem: load_png(p) for p in sorted(directory.glob("*.png"))}
        if not store:
            raise RestorerError(f"oracle directory {directory} holds no PNG frames")
        return cls(store)

    def restore(self, request: RestorationRequest) -> RestorationResponse:
        fixed = []
        for pose in request.frame_poses:
            if pose.pose_id not in self.ground_truth:
                return RestorationResponse(
                    [], self.name, STATUS_FAILED, f"no ground truth for pose {pose.pose_id}"
                )
            fixed.append(self.ground_truth[pose.pose_id].copy())
        return RestorationResponse(fixed, self.name, STATUS_OK)


@dataclass
class BlendBackend:
    """beta * ground truth + (1 - beta) * artifact, for beta in [0, 1]."""

    beta: float
    ground_truth: Mapping[str, np.ndarray]
    name: str = "blend"

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")

    def restore(self, request: RestorationRequest) -> RestorationResponse:
        fixed = []
        for frame, pose in zip(request.frames, request.frame_poses):
            if pose.pose_id not in self.ground_truth:
                return RestorationResponse(
                    [], self.name, STATUS_FAILED, f"no ground truth for pose {pose.pose_id}"
                )
            gt = self.ground_truth[pose.pose_id]
            fixed.append(self.beta * gt + (1.0 - self.beta) * frame)
        return RestorationResponse(fixed, self.name, STATUS_OK)


@dataclass
class FailingBackend:
    """Always fails; exercises the pipeline's rollback path."""

    detail: str = "synthetic failure"
    name: str = "failing"

    def restore(self, request: RestorationRequest) -> RestorationResponse:
        return RestorationResponse([], self.name, STATUS_FAILED, self.detail)


# ---------------------------------------------------------------------------
# directory exchange protocol


def job_directory(root: str | Path, scene_id: str, round_index: int) -> Path:
    return Path(root) / "jobs" / scene_id / str(round_index)


def write_request(root: str | Path, request: RestorationRequest) -> Path:
    """Write the request manifest and lossless frames into the job's in/ dir."""
    from .io import camera_to_dict

    in_dir = job_directory(root, request.scene_id, request.round_index) / "in"
    in_dir.mkdir(parents=True, exist_ok=True)
    frames = []
    for i, (frame, pose) in enumerate(zip(request.frames, request.frame_poses)):
        name = f"frame_{i:03d}.png"
        save_png(in_dir / name, frame)
        frames.append({"pose_id": pose.pose_id, "file": name, "pose": camera_to_dict(pose)})
    refs = []
    for i, (image, pose) in enumerate(zip(request.ref_images, request.ref_poses)):
        name = f"ref_{i}.png"
        save_png(in_dir / name, image)
        refs.append({"pose_id": pose.pose_id, "file": name, "pose": camera_to_dict(pose)})
    manifest = {
        "scene_id": request.scene_id,
        "round": request.round_index,
        "frames": frames,
        "references": refs,
    }
    write_json(in_dir / REQUEST_MANIFEST, manifest)
    return in_dir


def read_response(out_dir: Path) -> RestorationResponse:
    manifest = read_json(out_dir / RESPONSE_MANIFEST)
    status = manifest.get("status", STATUS_FAILED)
    if status != STATUS_OK:
        return RestorationResponse(
            [], manifest.get("backend", "remote"), status, manifest.get("error", "")
        )
    fixed = [load_png(out_dir / entry["file"]) for entry in manifest["fixed"]]
    return RestorationResponse(fixed, manifest.get("backend", "remote"), STATUS_OK)


@dataclass
class RemoteBackend:
    """Round-trips requests through the job-directory protocol.

    Polls ``out/response.json`` once per second until the backend answers or
    the timeout elapses.  Frames cross the boundary as 8-bit lossless PNG, so
    a full round trip quantizes to the 8-bit grid but loses nothing beyond it.
    """

    root: Path
    poll_interval: float = DEFAULT_POLL_INTERVAL
    timeout: float = DEFAULT_TIMEOUT
    name: str = "remote"

    def restore(self, request: RestorationRequest) -> RestorationResponse:
        write_request(self.root, request)
        out_dir = job_directory(self.root, request.scene_id, request.round_index) / "out"
        deadline = time.monotonic() + self.timeout
        while time.monotonic() < deadline:
            if (out_dir / RESPONSE_MANIFEST).exists():
                return read_response(out_dir)
            time.sleep(self.poll_interval)
        logger.warning(
            "remote restorer timed out after %.0f s (job %s round %d)",
            self.timeout,
            request.scene_id,
            request.round_index,
        )
        return RestorationResponse(
            [], self.name, STATUS_FAILED, f"no response within {self.timeout:.0f} s"
        )


def serve_echo_once(
    root: str | Path,
    scene_id: str,
    round_index: int,
    poll_interval: float = 0.05,
    timeout: float = 30.0,
) -> None:
    """Loopback backend: wait for a request and echo its frames back verbatim.

    Copies the PNG payloads byte-for-byte, so the round trip through the
    directory protocol is lossless.
    """
    job = job_directory(root, scene_id, round_index)
    in_dir = job / "in"
    deadline = time.monotonic() + timeout
    while not (in_dir / REQUEST_MANIFEST).exists():
        if time.monotonic() >= deadline:
            raise RestorerError(f"echo backend saw no request in {timeout:.0f} s")
        time.sleep(poll_interval)
    manifest = read_json(in_dir / REQUEST_MANIFEST)
    out_dir = job / "out"
    out_dir.mkdir(parents=True, exist_ok=True)
    fixed = []
    for entry in manifest["frames"]:
        name = f"fixed_{entry['file']}"
        (out_dir / name).write_bytes((in_dir / entry["file"]).read_bytes())
        fixed.append({"pose_id": entry["pose_id"], "file": name})
    write_json(
        out_dir / RESPONSE_MANIFEST,
        {
            "scene_id": manifest["scene_id"],
            "round": manifest["round"],
            "backend": "echo",
            "status": STATUS_OK,
            "fixed": fixed,
        },
    )


def backend_from_spec(spec: str) -> RestorerBackend:
    """Build a backend from a CLI spec string.

    Formats: ``identity``, ``oracle:DIR``, ``blend:BETA:DIR``, ``remote:DIR``.
    """
    parts = spec.split(":")
    kind = parts[0]
    if kind == "identity" and len(parts) == 1:
        return IdentityBackend()
    if kind == "oracle" and len(parts) == 2:
        return OracleBackend.from_dir(parts[1])
    if kind == "blend" and len(parts) == 3:
        oracle = OracleBackend.from_dir(parts[2])
        return BlendBackend(beta=float(parts[1]), ground_truth=oracle.ground_truth)
    if kind == "remote" and len(parts) == 2:
        return RemoteBackend(root=Path(parts[1]))
    raise ValueError(
        f"unrecognized restorer spec {spec!r}; expected identity, oracle:DIR, "
        f"blend:BETA:DIR, or remote:DIR"
    )
