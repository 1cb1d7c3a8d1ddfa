"""Command-line surface: fit, render, fix, bench, and gradcheck.

Commands exit 0 on success and nonzero with a machine-parsable JSON error on
stderr.  All randomness is controlled by --seed (default 0).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import io as io_mod
from .errors import ResplatError
from .gradcheck import gradcheck
from .optim import TrainConfig
from .pipeline import ReconJob, TrajectorySpec, fit_baseline, run_iterative_recon
from .raster import RenderConfig, render
from .restorer import backend_from_spec
from .scene import CameraPose
from .trajectory import (
    fit_orbit_path,
    sample_ellipse,
    sample_interpolation,
    sample_reference_guided,
)

logger = logging.getLogger(__name__)


def _resolve_image(entry: dict, base: Path) -> Path:
    if "image" not in entry:
        raise ValueError(f"camera entry {entry.get('pose_id')} has no image path")
    path = Path(entry["image"])
    return path if path.is_absolute() else base / path


def _load_views(cameras_path: Path, images_dir: Path | None):
    entries = io_mod.load_camera_entries(cameras_path)
    base = images_dir if images_dir is not None else cameras_path.parent
    poses = [io_mod.camera_from_dict(e) for e in entries]
    images = [io_mod.load_png(_resolve_image(e, base)) for e in entries]
    return poses, images


def _default_split(frames: int) -> tuple[int, int, int]:
    leg = max(1, round(frames / 6))
    return (leg, frames - 2 * leg, leg)


def _parse_split(text: str | None, frames: int) -> tuple[int, int, int]:
    if not text:
        return _default_split(frames)
    parts = tuple(int(v) for v in text.split(","))
    if len(parts) != 3:
        raise ValueError(f"--split expects three comma-separated integers, got {text!r}")
    return parts


def _job_from_config(config: dict, config_dir: Path) -> ReconJob:
    def _path(key):
        p = Path(config[key])
        return p if p.is_absolute() else config_dir / p

    poses, images = _load_views(_path("cameras"), _path("images") if "images" in config else None)
    points, colors = io_mod.load_points3d_text(_path("points"))
    frames = int(config.get("frames_per_plan", 9))
    split = tuple(config.get("split", _default_split(frames)))
    background = tuple(config.get("background", (0.0, 0.0, 0.0)))

    eval_poses: list[CameraPose] = []
    eval_images: list[np.ndarray] = []
    if "eval_cameras" in config:
        eval_poses, eval_images = _load_views(
            _path("eval_cameras"), _path("images") if "images" in config else None
        )

    return ReconJob(
        scene_id=config.get("scene_id", "scene"),
        input_images=images,
        input_poses=poses,
        init_points=points,
        init_colors=colors,
        backend=backend_from_spec(config.get("restorer", "identity")),
        rounds=int(config.get("rounds", 3)),
        trajectories=[TrajectorySpec(frames=frames, split=split)],
        baseline_config=TrainConfig(iterations=int(config.get("baseline_iterations", 500))),
        round_config=TrainConfig(iterations=int(config.get("round_iterations", 200))),
        render_config=RenderConfig(background=background),
        sh_degree=int(config.get("sh_degree", 0)),
        background=background,
        eval_poses=eval_poses,
        eval_images=eval_images,
        seed=int(config.get("seed", 0)),
    )


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    config = {
        "scene_id": args.scene_id,
        "cameras": str(args.cameras),
        "points": str(args.points),
        "baseline_iterations": args.iters,
        "seed": args.seed,
        "sh_degree": args.sh_degree,
    }
    if args.images:
        config["images"] = str(args.images)
    job = _job_from_config(config, Path.cwd())
    scene = fit_baseline(job)
    io_mod.save_ply(scene, args.out)
    print(json.dumps({"scene": str(args.out), "splats": len(scene)}))
    return 0


def cmd_render(args) -> int:
    scene = io_mod.load_ply(args.scene)
    cameras = io_mod.load_cameras(args.cameras)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.traj is None:
        poses = cameras
        labels = {}
    else:
        frames = args.frames
        if len(cameras) < 2:
            raise ValueError("trajectory rendering needs at least two reference cameras")
        ref_a, ref_b = cameras[0], cameras[-1]
        if args.traj == "interp":
            plan = sample_interpolation(ref_a, ref_b, frames)
        elif args.traj == "ellipse":
            orbit = fit_orbit_path(cameras)
            plan = sample_ellipse(orbit, (0.0, 2.0 * np.pi), frames, cameras[0])
        else:  # refguided
            split = _parse_split(args.split, frames)
            if frames >= 3 and len(cameras) >= 3:
                orbit = fit_orbit_path(cameras)
                plan = sample_reference_guided(ref_a, ref_b, orbit, frames, split)
            else:
                # Too few cameras for an orbit: hybrid degenerates to interpolation.
                plan = sample_interpolation(ref_a, ref_b, frames)
        poses = plan.poses
        labels = {p.pose_id: l for p, l in zip(plan.poses, plan.labels)}

    config = RenderConfig(background=scene.background)
    images = {}
    for pose in poses:
        frame = render(scene, pose, config)
        name = f"{pose.pose_id.replace('/', '_').replace(':', '_')}.png"
        io_mod.save_png(out_dir / name, frame.rgb)
        images[pose.pose_id] = name
    io_mod.save_cameras(poses, out_dir / "manifest.json", images=images, labels=labels or None)
    print(json.dumps({"out": str(out_dir), "frames": len(poses)}))
    return 0


def cmd_fix(args) -> int:
    config_path = Path(args.job)
    config = io_mod.read_json(config_path)
    job = _job_from_config(config, config_path.parent)
    out_dir = Path(config.get("out", "fix_out"))
    if not out_dir.is_absolute():
        out_dir = config_path.parent / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    baseline = fit_baseline(job)
    io_mod.save_ply(baseline, out_dir / "scene_round_0.ply")
    result = run_iterative_recon(job, baseline=baseline)
    for r, snapshot in enumerate(result.round_scenes, start=1):
        io_mod.save_ply(snapshot, out_dir / f"scene_round_{r}.ply")
    io_mod.save_ply(result.scene, out_dir / "scene.ply")
    metrics = [report.to_dict() for report in result.round_reports]
    io_mod.write_json(out_dir / "metrics.json", metrics)
    io_mod.write_json(
        out_dir / "audit.json",
        {
            "restorer_calls": [vars(c) for c in result.audit.restorer_calls],
            "round_heldout_psnr": result.audit.round_heldout_psnr,
            "loss_samples": len(result.audit.loss_history),
        },
    )
    from .figures import save_loss_figure

    save_loss_figure(result.audit, out_dir / "loss_curve.png")
    print(
        json.dumps(
            {
                "scene": str(out_dir / "scene.ply"),
                "rounds": job.rounds,
                "gen_targets": len(result.gen_targets),
            }
        )
    )
    return 0


def cmd_bench_build(args) -> int:
    poses, images = _load_views(Path(args.cameras), Path(args.images) if args.images else None)
    points, colors = io_mod.load_points3d_text(args.points)
    capture = bench_mod.DenseCapture(args.scene_id, poses, images)
    bench_mod.build_res_scene(
        capture,
        k=args.k,
        train_config=TrainConfig(iterations=args.iters),
        out_dir=args.out,
        init_points=points,
        init_colors=colors,
        sh_degree=args.sh_degree,
    )
    print(json.dumps({"scene": str(Path(args.out) / "scene.json"), "pairs": len(poses)}))
    return 0


def cmd_bench_eval(args) -> int:
    scene = bench_mod.load_benchmark_scene(args.scene)
    candidates = None
    if args.candidates:
        cdir = Path(args.candidates)
        candidates = {}
        for _, _, pose_id in scene.eval_pairs:
            path = cdir / f"{pose_id}.png"
            if not path.exists():
                raise FileNotFoundError(f"candidate frame missing: {path}")
            candidates[pose_id] = io_mod.load_png(path)
    report = bench_mod.evaluate_scene(scene, candidates, args.external)
    io_mod.write_json(args.out, report.to_dict())
    print(json.dumps({"report": str(args.out), "psnr": report.per_scene["psnr"]}))
    return 0


def cmd_bench_report(args) -> int:
    reports = [bench_mod.MetricsReport.from_dict(io_mod.read_json(p)) for p in args.reports]
    table = bench_mod.aggregate_report(reports)
    io_mod.atomic_write_text(args.out, table.to_csv())
    if args.fig:
        from .figures import save_report_figure

        save_report_figure(table, args.fig)
    print(table.to_text())
    return 0


def cmd_gradcheck(args) -> int:
    errors = gradcheck(seed=args.seed, n_splats=args.splats, resolution=args.res)
    worst = max(errors.values())
    print(json.dumps({"per_group": errors, "max_relative_error": worst}))
    return 0 if worst < 1e-3 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resplat",
        description="Sparse-view Gaussian-splatting toolkit with restoration-in-the-loop training.",
    )
    parser.add_argument("--verbose", action="store_true", help="enable info logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a baseline scene from sparse views")
    p_fit.add_argument("--cameras", required=True, type=Path)
    p_fit.add_argument("--points", required=True, type=Path)
    p_fit.add_argument("--images", type=Path, default=None)
    p_fit.add_argument("--out", required=True, type=Path)
    p_fit.add_argument("--iters", type=int, default=500)
    p_fit.add_argument("--sh-degree", type=int, default=0)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--scene-id", default="scene")
    p_fit.set_defaults(func=cmd_fit)

    p_render = sub.add_parser("render", help="render a scene along cameras or a sampled path")
    p_render.add_argument("--scene", required=True, type=Path)
    p_render.add_argument("--cameras", required=True, type=Path)
    p_render.add_argument("--out", required=True, type=Path)
    p_render.add_argument("--traj", choices=["interp", "ellipse", "refguided"], default=None)
    p_render.add_argument("--frames", type=int, default=49)
    p_render.add_argument("--split", default=None, help="a,b,c pose counts for refguided")
    p_render.add_argument("--seed", type=int, default=0)
    p_render.set_defaults(func=cmd_render)

    p_fix = sub.add_parser("fix", help="run iterative restoration-in-the-loop reconstruction")
    p_fix.add_argument("--job", required=True, type=Path, help="job config JSON")
    p_fix.set_defaults(func=cmd_fix)

    p_bench = sub.add_parser("bench", help="benchmark building and evaluation")
    bench_sub = p_bench.add_subparsers(dest="bench_command", required=True)

    p_build = bench_sub.add_parser("build", help="build artifact/clean pairs from a capture")
    p_build.add_argument("--cameras", required=True, type=Path)
    p_build.add_argument("--images", type=Path, default=None)
    p_build.add_argument("--points", required=True, type=Path)
    p_build.add_argument("--k", type=int, required=True)
    p_build.add_argument("--iters", type=int, default=500)
    p_build.add_argument("--out", required=True, type=Path)
    p_build.add_argument("--sh-degree", type=int, default=0)
    p_build.add_argument("--seed", type=int, default=0)
    p_build.add_argument("--scene-id", default="scene")
    p_build.set_defaults(func=cmd_bench_build)

    p_eval = bench_sub.add_parser("eval", help="evaluate candidate frames against a benchmark scene")
    p_eval.add_argument("--scene", required=True, type=Path)
    p_eval.add_argument("--candidates", type=Path, default=None)
    p_eval.add_argument("--external", type=Path, default=None)
    p_eval.add_argument("--out", required=True, type=Path)
    p_eval.set_defaults(func=cmd_bench_eval)

    p_report = bench_sub.add_parser("report", help="aggregate scene reports into CSV + figure")
    p_report.add_argument("reports", nargs="+", type=Path)
    p_report.add_argument("--out", required=True, type=Path)
    p_report.add_argument("--fig", type=Path, default=None)
    p_report.set_defaults(func=cmd_bench_report)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--splats", type=int, default=50)
    p_grad.add_argument("--res", type=int, default=32)
    p_grad.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ResplatError, ValueError, OSError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
