"""Benchmark construction and metric reporting for artifact/clean frame pairs.

A benchmark scene is built by fitting a deliberately low-quality scene from K
sparse views of a dense capture and rendering every capture pose: the renders
are the artifact frames, the capture images the ground truth.  Evaluation
reports per-frame PSNR/SSIM (plus externally supplied perceptual scores via a
manifest; they are never computed here) and aggregates per-scene and across
scenes.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from io import StringIO
from pathlib import Path

import numpy as np

from .errors import ShapeMismatchError
from .io import load_png, read_json, save_png, write_json
from .losses import psnr, ssim
from .raster import RenderConfig, render
from .scene import CameraPose, Scene

logger = logging.getLogger(__name__)

SPLIT_TRAIN = "train"
SPLIT_HELDOUT = "heldout"


@dataclass
class FrameMetrics:
    pose_id: str
    psnr: float
    ssim: float
    split: str = SPLIT_HELDOUT
    external: dict[str, float] = field(default_factory=dict)


@dataclass
class MetricsReport:
    """Per-frame rows plus per-scene means (and optional external scores)."""

    scene_id: str
    per_frame: list[FrameMetrics]
    external: dict[str, float] = field(default_factory=dict)

    @property
    def per_scene(self) -> dict[str, float]:
        rows = self.per_frame
        if not rows:
            return {"psnr": float("nan"), "ssim": float("nan")}
        out = {
            "psnr": float(np.mean([r.psnr for r in rows])),
            "ssim": float(np.mean([r.ssim for r in rows])),
        }
        out.update(self.external)
        return out

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "per_frame": [
                {
                    "pose_id": r.pose_id,
                    "psnr": r.psnr,
                    "ssim": r.ssim,
                    "split": r.split,
                    **({"external": r.external} if r.external else {}),
                }
                for r in self.per_frame
            ],
            "per_scene": self.per_scene,
            **({"external": self.external} if self.external else {}),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricsReport":
        rows = [
            FrameMetrics(
                pose_id=r["pose_id"],
                psnr=float(r["psnr"]),
                ssim=float(r["ssim"]),
                split=r.get("split", SPLIT_HELDOUT),
                external=r.get("external", {}),
            )
            for r in payload["per_frame"]
        ]
        return cls(payload["scene_id"], rows, payload.get("external", {}))


def report_from_frames(
    scene_id: str,
    pose_ids: list[str],
    candidates: list[np.ndarray],
    targets: list[np.ndarray],
    splits: list[str] | None = None,
) -> MetricsReport:
    """PSNR/SSIM rows for aligned candidate/target frame lists."""
    if not (len(pose_ids) == len(candidates) == len(targets)):
        raise ShapeMismatchError("pose_ids, candidates, and targets must align")
    splits = splits or [SPLIT_HELDOUT] * len(pose_ids)
    rows = [
        FrameMetrics(pid, psnr(c, t), ssim(c, t), split)
        for pid, c, t, split in zip(pose_ids, candidates, targets, splits)
    ]
    return MetricsReport(scene_id, rows)


# ---------------------------------------------------------------------------
# benchmark scenes


@dataclass
class DenseCapture:
    """A dense pose/image capture used as benchmark raw material."""

    scene_id: str
    poses: list[CameraPose]
    images: list[np.ndarray]

    def __post_init__(self):
        if len(self.poses) != len(self.images):
            raise ShapeMismatchError("capture poses and images must align")


@dataclass
class BenchmarkScene:
    """File-backed artifact/clean pair set for one scene."""

    scene_id: str
    sparse_train_ids: list[str]
    eval_pairs: list[tuple[str, str, str]]  # (artifact path, gt path, pose_id)
    splits: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        eval_ids = {pid for _, _, pid in self.eval_pairs}
        held_out = eval_ids - set(self.sparse_train_ids)
        if not held_out:
            logger.warning("benchmark scene %s has no held-out rows", self.scene_id)


def uniform_stride_indices(capture_size: int, k: int) -> list[int]:
    """K indices at uniform stride over the capture ordering: round(i (M-1)/(K-1))."""
    if k < 1 or k > capture_size:
        raise ValueError(f"cannot pick {k} views from a {capture_size}-pose capture")
    if k == 1:
        return [0]
    return [round(i * (capture_size - 1) / (k - 1)) for i in range(k)]


def build_res_scene(
    capture: DenseCapture,
    k: int,
    train_config,
    out_dir: str | Path,
    init_points: np.ndarray,
    init_colors: np.ndarray,
    render_config: RenderConfig | None = None,
    sh_degree: int = 0,
) -> BenchmarkScene:
    """Build artifact/clean pairs by under-fitting the capture from K views.

    K training views are chosen by uniform stride over the capture's pose
    ordering, a scene is fit from them alone, and every capture pose is then
    rendered to produce the artifact frames.  Pairs and the scene manifest
    land in ``out_dir``.
    """
    from .optim import TrainConfig
    from .pipeline import ReconJob, fit_baseline

    if not isinstance(train_config, TrainConfig):
        raise TypeError("train_config must be a TrainConfig")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    render_config = render_config or RenderConfig()

    train_idx = uniform_stride_indices(len(capture.poses), k)
    train_ids = [capture.poses[i].pose_id for i in train_idx]
    job = ReconJob(
        scene_id=capture.scene_id,
        input_images=[capture.images[i] for i in train_idx],
        input_poses=[capture.poses[i] for i in train_idx],
        init_points=init_points,
        init_colors=init_colors,
        baseline_config=train_config,
        render_config=render_config,
        sh_degree=sh_degree,
    )
    scene = fit_baseline(job)

    pairs = []
    splits = {}
    for pose, gt in zip(capture.poses, capture.images):
        artifact = render(scene, pose, render_config).rgb
        art_path = out_dir / f"{pose.pose_id}_artifact.png"
        gt_path = out_dir / f"{pose.pose_id}_gt.png"
        save_png(art_path, artifact)
        save_png(gt_path, gt)
        pairs.append((str(art_path), str(gt_path), pose.pose_id))
        splits[pose.pose_id] = SPLIT_TRAIN if pose.pose_id in train_ids else SPLIT_HELDOUT

    bench_scene = BenchmarkScene(capture.scene_id, train_ids, pairs, splits)
    write_json(
        out_dir / "scene.json",
        {
            "scene_id": capture.scene_id,
            "sparse_train_ids": train_ids,
            "pairs": [
                {"pose_id": pid, "artifact": art, "gt": gt, "split": splits[pid]}
                for art, gt, pid in pairs
            ],
        },
    )
    return bench_scene


def load_benchmark_scene(manifest_path: str | Path) -> BenchmarkScene:
    payload = read_json(manifest_path)
    pairs = [(e["artifact"], e["gt"], e["pose_id"]) for e in payload["pairs"]]
    splits = {e["pose_id"]: e.get("split", SPLIT_HELDOUT) for e in payload["pairs"]}
    return BenchmarkScene(payload["scene_id"], payload["sparse_train_ids"], pairs, splits)


def evaluate_scene(
    scene: BenchmarkScene,
    candidate_frames: dict[str, np.ndarray] | None = None,
    external_scores: str | Path | dict | None = None,
) -> MetricsReport:
    """Per-frame PSNR/SSIM of candidate frames against the scene's ground truth.

    With no candidates, the artifact renders themselves are evaluated (the
    benchmark's baseline row).  External per-pose score rows (e.g. perceptual
    metrics from outside tools) are merged from a manifest mapping
    pose_id -> {name: score}; scene-level external means are averaged.
    """
    external = {}
    if external_scores is not None:
        external = external_scores if isinstance(external_scores, dict) else read_json(external_scores)

    rows = []
    for art_path, gt_path, pose_id in scene.eval_pairs:
        gt = load_png(gt_path)
        if candidate_frames is None:
            candidate = load_png(art_path)
        else:
            if pose_id not in candidate_frames:
                raise KeyError(f"candidate frames missing pose {pose_id}")
            candidate = candidate_frames[pose_id]
        if candidate.shape != gt.shape:
            raise ShapeMismatchError(
                f"pose {pose_id}: candidate shape {candidate.shape} != gt {gt.shape}"
            )
        row = FrameMetrics(
            pose_id,
            psnr(candidate, gt),
            ssim(candidate, gt),
            scene.splits.get(pose_id, SPLIT_HELDOUT),
            external=dict(external.get(pose_id, {})),
        )
        rows.append(row)

    report = MetricsReport(scene.scene_id, rows)
    names = {name for row in rows for name in row.external}
    for name in sorted(names):
        vals = [row.external[name] for row in rows if name in row.external]
        report.external[name] = float(np.mean(vals))
    return report


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class ReportTable:
    """One row per scene plus an average row."""

    columns: list[str]
    rows: list[tuple]  # (scene_id, *values)
    average: tuple

    def to_csv(self) -> str:
        buf = StringIO()
        writer = csv.writer(buf)
        writer.writerow(["scene"] + self.columns)
        for row in self.rows:
            writer.writerow([row[0]] + [f"{v:.6f}" for v in row[1:]])
        writer.writerow([self.average[0]] + [f"{v:.6f}" for v in self.average[1:]])
        return buf.getvalue()

    def to_text(self) -> str:
        header = ["scene"] + self.columns
        all_rows = [header] + [
            [str(r[0])] + [f"{v:.3f}" for v in r[1:]] for r in self.rows + [self.average]
        ]
        widths = [max(len(row[i]) for row in all_rows) for i in range(len(header))]
        return "\n".join(
            "  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in all_rows
        )


def aggregate_report(reports: list[MetricsReport]) -> ReportTable:
    """Scene rows + average row, columns ordered PSNR, SSIM, then externals."""
    if not reports:
        raise ValueError("aggregate_report needs at least one report")
    external_names = sorted({name for r in reports for name in r.per_scene if name not in ("psnr", "ssim")})
    columns = ["psnr", "ssim"] + external_names
    rows = []
    for report in reports:
        per_scene = report.per_scene
        rows.append(
            (report.scene_id,)
            + tuple(per_scene.get(col, float("nan")) for col in columns)
        )
    avg = tuple(float(np.mean([row[1 + i] for row in rows])) for i in range(len(columns)))
    return ReportTable(columns, rows, ("average",) + avg)
