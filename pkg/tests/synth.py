"""Synthetic ground-truth worlds shared by pipeline, bench, and acceptance tests."""

from __future__ import annotations

import numpy as np

from resplat.pipeline import ReconJob, TrajectorySpec
from resplat.raster import RenderConfig, render
from resplat.scene import CameraPose, Scene
from resplat.trajectory import look_at_pose

SH_C0 = 0.28209479177387814

BACKGROUND = (0.08, 0.08, 0.1)


def make_ground_truth_scene(seed: int, n_splats: int = 300) -> Scene:
    """A bounded cluster of colorful splats around the origin."""
    rng = np.random.default_rng(seed)
    means = rng.normal(scale=0.7, size=(n_splats, 3))
    scales_raw = rng.uniform(np.log(0.06), np.log(0.16), size=(n_splats, 3))
    rotations = rng.normal(size=(n_splats, 4))
    opacities = rng.uniform(0.0, 2.5, size=n_splats)
    colors = rng.uniform(0.15, 0.85, size=(n_splats, 3))
    sh = ((colors - 0.5) / SH_C0)[:, None, :]
    return Scene(means, scales_raw, rotations, opacities, sh, 0, BACKGROUND)


def make_arc_camera(theta: float, pose_id: str, resolution: int = 64, radius: float = 4.0, height: float = 0.4) -> CameraPose:
    template = CameraPose(
        rotation=np.array([1.0, 0.0, 0.0, 0.0]),
        translation=np.zeros(3),
        fx=1.4 * resolution,
        fy=1.4 * resolution,
        cx=resolution / 2.0,
        cy=resolution / 2.0,
        width=resolution,
        height=resolution,
        pose_id=pose_id,
    )
    eye = np.array([radius * np.cos(theta), height, radius * np.sin(theta)])
    return look_at_pose(eye, np.zeros(3), template, pose_id)


def make_capture(n_views: int, resolution: int = 64, arc=(0.15, 2.1), prefix: str = "view") -> list[CameraPose]:
    thetas = np.linspace(arc[0], arc[1], n_views)
    return [make_arc_camera(t, f"{prefix}_{i:03d}", resolution) for i, t in enumerate(thetas)]


def make_sparse_recon_setup(
    seed: int,
    n_splats: int = 300,
    resolution: int = 64,
    n_train: int = 3,
    n_heldout: int = 8,
    render_config: RenderConfig | None = None,
):
    """Ground-truth scene, train/held-out views with GT renders, and init points.

    Train poses sit on an arc around the scene; held-out poses interleave the
    same arc so they are genuinely novel but not extrapolated.
    """
    render_config = render_config or RenderConfig(background=BACKGROUND)
    gt_scene = make_ground_truth_scene(seed, n_splats)

    arc = (0.15, 2.1)
    train_thetas = np.linspace(arc[0], arc[1], n_train)
    train_poses = [make_arc_camera(t, f"train_{i:03d}", resolution) for i, t in enumerate(train_thetas)]
    held_thetas = np.linspace(arc[0] + 0.08, arc[1] - 0.08, n_heldout)
    eval_poses = [make_arc_camera(t, f"heldout_{i:03d}", resolution) for i, t in enumerate(held_thetas)]

    train_images = [render(gt_scene, p, render_config).rgb for p in train_poses]
    eval_images = [render(gt_scene, p, render_config).rgb for p in eval_poses]

    rng = np.random.default_rng(seed + 500)
    init_points = gt_scene.means + rng.normal(scale=0.01, size=gt_scene.means.shape)
    init_colors = np.clip(0.5 + SH_C0 * gt_scene.sh[:, 0, :], 0.0, 1.0)

    return {
        "gt_scene": gt_scene,
        "train_poses": train_poses,
        "train_images": train_images,
        "eval_poses": eval_poses,
        "eval_images": eval_images,
        "init_points": init_points,
        "init_colors": init_colors,
        "render_config": render_config,
    }


def make_job(setup, seed: int = 0, backend=None, **overrides) -> ReconJob:
    from resplat.restorer import IdentityBackend

    kwargs = dict(
        scene_id=f"synthetic_{seed}",
        input_images=setup["train_images"],
        input_poses=setup["train_poses"],
        init_points=setup["init_points"],
        init_colors=setup["init_colors"],
        backend=backend or IdentityBackend(),
        render_config=setup["render_config"],
        background=BACKGROUND,
        eval_poses=setup["eval_poses"],
        eval_images=setup["eval_images"],
        seed=seed,
        trajectories=[TrajectorySpec(frames=9, split=(2, 5, 2))],
    )
    kwargs.update(overrides)
    return ReconJob(**kwargs)


def gt_store_for(setup, poses) -> dict:
    """Ground-truth renders keyed by pose_id (the oracle restorer's store)."""
    return {
        p.pose_id: render(setup["gt_scene"], p, setup["render_config"]).rgb for p in poses
    }


def full_gt_store(setup, job: ReconJob) -> dict:
    """Oracle store covering every novel pose the job's plans can request."""
    from resplat.pipeline import _build_plans

    store = {}
    for round_index in range(1, job.rounds + 1):
        for _, plan in _build_plans(job, round_index):
            for pose in plan.poses:
                if pose.pose_id not in store:
                    store[pose.pose_id] = render(
                        setup["gt_scene"], pose, setup["render_config"]
                    ).rgb
    return store
