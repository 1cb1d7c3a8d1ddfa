"""File formats and persistence.

Scenes interchange as binary little-endian PLY with the common 3DGS vertex
layout (raw log-scales, logit opacity, unnormalized wxyz quaternion, f_dc /
f_rest SH coefficients with channel-major rest ordering), so third-party
viewers load the files directly.  Cameras serialize to JSON.  Images are
8-bit lossless PNG on disk and float arrays in [0, 1] in memory.  Every write
goes through a temp-file-and-rename so readers never observe partial files.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ShapeMismatchError
from .scene import CameraPose, Scene, sh_coeff_count

_PLY_DTYPE = "<f4"
_TOKEN_MAGIC = b"RTOK"


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write bytes to a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: str | Path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def read_json(path: str | Path):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


# ---------------------------------------------------------------------------
# scene PLY


def _ply_property_names(sh_degree: int) -> list[str]:
    rest = 3 * (sh_coeff_count(sh_degree) - 1)
    names = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def save_ply(scene: Scene, path: str | Path) -> None:
    """Write the scene as binary little-endian PLY (float32 properties)."""
    names = _ply_property_names(scene.sh_degree)
    n = len(scene)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")

    data = np.empty(n, dtype=[(name, _PLY_DTYPE) for name in names])
    data["x"], data["y"], data["z"] = scene.means.T.astype(np.float32)
    for c in range(3):
        data[f"f_dc_{c}"] = scene.sh[:, 0, c].astype(np.float32)
    rest = scene.sh[:, 1:, :].transpose(0, 2, 1).reshape(n, -1)  # channel-major
    for i in range(rest.shape[1]):
        data[f"f_rest_{i}"] = rest[:, i].astype(np.float32)
    data["opacity"] = scene.opacities_raw.astype(np.float32)
    for i in range(3):
        data[f"scale_{i}"] = scene.scales_raw[:, i].astype(np.float32)
    for i in range(4):
        data[f"rot_{i}"] = scene.rotations_raw[:, i].astype(np.float32)

    atomic_write_bytes(path, ("\n".join(header) + "\n").encode("ascii") + data.tobytes())


def load_ply(path: str | Path) -> Scene:
    """Load a scene from the PLY layout written by save_ply."""
    with open(path, "rb") as handle:
        blob = handle.read()
    end = blob.find(b"end_header\n")
    if end < 0:
        raise ValueError(f"{path}: missing PLY end_header")
    header_lines = blob[:end].decode("ascii").splitlines()
    body = blob[end + len(b"end_header\n"):]

    if header_lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    if "binary_little_endian" not in header_lines[1]:
        raise ValueError(f"{path}: expected binary little-endian PLY")
    n = None
    names = []
    for line in header_lines[2:]:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts[0] == "property":
            if parts[1] != "float":
                raise ValueError(f"{path}: unsupported property type {parts[1]}")
            names.append(parts[2])
    if n is None:
        raise ValueError(f"{path}: missing vertex element")

    rest_count = sum(1 for name in names if name.startswith("f_rest_"))
    if rest_count % 3:
        raise ValueError(f"{path}: f_rest count {rest_count} is not a multiple of 3")
    k = rest_count // 3 + 1
    degree = int(np.sqrt(k)) - 1
    if sh_coeff_count(degree) != k:
        raise ValueError(f"{path}: f_rest count {rest_count} matches no SH degree")
    if names != _ply_property_names(degree):
        raise ValueError(f"{path}: property layout does not match the scene schema")

    data = np.frombuffer(body, dtype=[(name, _PLY_DTYPE) for name in names], count=n)
    means = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    sh = np.zeros((n, k, 3))
    for c in range(3):
        sh[:, 0, c] = data[f"f_dc_{c}"]
    if k > 1:
        rest = np.stack([data[f"f_rest_{i}"] for i in range(rest_count)], axis=1)
        sh[:, 1:, :] = rest.reshape(n, 3, k - 1).transpose(0, 2, 1)
    scales = np.stack([data[f"scale_{i}"] for i in range(3)], axis=1).astype(np.float64)
    rots = np.stack([data[f"rot_{i}"] for i in range(4)], axis=1).astype(np.float64)
    ops = data["opacity"].astype(np.float64)
    return Scene(means, scales, rots, ops, sh, degree)


# ---------------------------------------------------------------------------
# cameras JSON


def camera_to_dict(pose: CameraPose, image: str | None = None, label: str | None = None) -> dict:
    entry = {
        "pose_id": pose.pose_id,
        "quaternion": [float(v) for v in pose.rotation],
        "translation": [float(v) for v in pose.translation],
        "fx": float(pose.fx),
        "fy": float(pose.fy),
        "cx": float(pose.cx),
        "cy": float(pose.cy),
        "width": int(pose.width),
        "height": int(pose.height),
    }
    if image is not None:
        entry["image"] = image
    if label is not None:
        entry["label"] = label
    return entry


def camera_from_dict(entry: dict) -> CameraPose:
    return CameraPose(
        rotation=np.asarray(entry["quaternion"], dtype=np.float64),
        translation=np.asarray(entry["translation"], dtype=np.float64),
        fx=float(entry["fx"]),
        fy=float(entry["fy"]),
        cx=float(entry["cx"]),
        cy=float(entry["cy"]),
        width=int(entry["width"]),
        height=int(entry["height"]),
        pose_id=str(entry["pose_id"]),
    )


def save_cameras(
    poses: list[CameraPose],
    path: str | Path,
    images: dict[str, str] | None = None,
    labels: dict[str, str] | None = None,
) -> None:
    """Write a cameras JSON file (a list of pose entries)."""
    images = images or {}
    labels = labels or {}
    entries = [
        camera_to_dict(p, images.get(p.pose_id), labels.get(p.pose_id)) for p in poses
    ]
    write_json(path, entries)


def load_cameras(path: str | Path) -> list[CameraPose]:
    """Load cameras JSON; pose_ids must be unique, quaternions are normalized."""
    entries = read_json(path)
    if not isinstance(entries, list):
        raise ValueError(f"{path}: cameras file must be a JSON list")
    poses = [camera_from_dict(e) for e in entries]
    ids = [p.pose_id for p in poses]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"{path}: duplicate pose_ids {dupes}")
    return poses


def load_camera_entries(path: str | Path) -> list[dict]:
    """Raw camera entries (including optional image/label fields)."""
    entries = read_json(path)
    if not isinstance(entries, list):
        raise ValueError(f"{path}: cameras file must be a JSON list")
    return entries


# ---------------------------------------------------------------------------
# images


def save_png(path: str | Path, image: np.ndarray) -> None:
    """Save a float image in [0, 1] as 8-bit RGB PNG (lossless)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatchError(f"expected (H, W, 3) image, got shape {image.shape}")
    quantized = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    import io as _io

    buf = _io.BytesIO()
    Image.fromarray(quantized, mode="RGB").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def load_png(path: str | Path) -> np.ndarray:
    """Load an 8-bit PNG as a float array in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


# ---------------------------------------------------------------------------
# COLMAP points3D.txt


def load_points3d_text(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Parse a COLMAP text points3D file.

    Columns are POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[]; only position
    and color are used.

    Returns:
        (N, 3) xyz in meters and (N, 3) rgb in [0, 1].
    """
    xyz = []
    rgb = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 7:
                raise ValueError(f"{path}: malformed points3D line: {line[:60]!r}")
            xyz.append([float(parts[1]), float(parts[2]), float(parts[3])])
            rgb.append([float(parts[4]), float(parts[5]), float(parts[6])])
    xyz_arr = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    rgb_arr = np.asarray(rgb, dtype=np.float64).reshape(-1, 3) / 255.0
    return xyz_arr, rgb_arr


# ---------------------------------------------------------------------------
# token tensors


def save_tokens(path: str | Path, data: np.ndarray) -> None:
    """Binary tensor file: magic, uint32 dims, row-major float32 little-endian."""
    data = np.ascontiguousarray(np.asarray(data, dtype="<f4"))
    if data.ndim != 2:
        raise ShapeMismatchError(f"token files store 2D matrices, got shape {data.shape}")
    header = _TOKEN_MAGIC + np.asarray(data.shape, dtype="<u4").tobytes()
    atomic_write_bytes(path, header + data.tobytes())


def load_tokens(path: str | Path) -> np.ndarray:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:4] != _TOKEN_MAGIC:
        raise ValueError(f"{path}: bad token-file magic")
    rows, cols = np.frombuffer(blob[4:12], dtype="<u4")
    data = np.frombuffer(blob[12:], dtype="<f4", count=rows * cols)
    return data.reshape(int(rows), int(cols)).copy()
