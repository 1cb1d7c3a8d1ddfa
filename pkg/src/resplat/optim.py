"""Scene parameter updates and densify/prune maintenance.

Parameters are updated with a first-order adaptive-moment rule
(betas 0.9/0.999, eps 1e-15, bias-corrected) using per-group learning rates;
quaternions are renormalized after every step so scene invariants survive
unconstrained updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .raster import GradientBuffer
from .scene import Scene, quats_to_rotmats

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15

SPLIT_SCALE_SHRINK = np.log(1.6)


@dataclass
class TrainConfig:
    """Optimization schedule and maintenance thresholds."""

    iterations: int = 500
    lr_mean: float = 2e-3
    lr_scale: float = 5e-3
    lr_rotation: float = 2e-3
    lr_opacity: float = 2.5e-2
    lr_sh: float = 5e-3
    densify_interval: int = 0  # 0 disables densification
    densify_grad_threshold: float = 5e-5
    densify_scale_threshold: float = 0.05
    prune_opacity_threshold: float = 0.005
    max_splats: int = 100_000

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        for name in ("densify_grad_threshold", "densify_scale_threshold", "prune_opacity_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def learning_rates(self) -> dict[str, float]:
        return {
            "mean": self.lr_mean,
            "scale_raw": self.lr_scale,
            "rotation_raw": self.lr_rotation,
            "opacity_raw": self.lr_opacity,
            "sh": self.lr_sh,
        }


@dataclass
class AdamState:
    """First and second moment estimates per parameter group."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_scene(cls, scene: Scene) -> "AdamState":
        zeros = GradientBuffer.zeros(scene).groups()
        return cls(step=0, m={k: a.copy() for k, a in zeros.items()}, v=zeros)


def optimize_step(
    scene: Scene,
    gradients: GradientBuffer,
    state: AdamState | None,
    config: TrainConfig,
) -> tuple[Scene, AdamState]:
    """One adaptive-moment update of every raw parameter group.

    Returns an updated scene copy and the advanced moment state; the input
    scene is left untouched (callers must not render from a scene mid-update,
    so handing back a fresh object keeps that contract easy to honor).
    """
    if state is None:
        state = AdamState.for_scene(scene)
    out = scene.copy()
    params = {
        "mean": out.means,
        "scale_raw": out.scales_raw,
        "rotation_raw": out.rotations_raw,
        "opacity_raw": out.opacities_raw,
        "sh": out.sh,
    }
    grads = gradients.groups()
    lrs = config.learning_rates()
    state.step += 1
    t = state.step
    bias1 = 1.0 - ADAM_BETA1**t
    bias2 = 1.0 - ADAM_BETA2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient group {name} has shape {g.shape}, expected {p.shape}")
        state.m[name] = ADAM_BETA1 * state.m[name] + (1 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1 - ADAM_BETA2) * g * g
        m_hat = state.m[name] / bias1
        v_hat = state.v[name] / bias2
        p -= lrs[name] * m_hat / (np.sqrt(v_hat) + ADAM_EPS)

    norms = np.linalg.norm(out.rotations_raw, axis=1, keepdims=True)
    out.rotations_raw /= norms
    return out, state


def densify_and_prune(
    scene: Scene,
    positional_gradients: np.ndarray,
    config: TrainConfig,
) -> Scene:
    """Clone/split high-gradient splats and prune near-transparent ones.

    Splats whose accumulated positional gradient exceeds
    ``densify_grad_threshold`` are cloned when small and replaced by two
    copies with scale shrunk by 1.6 (offset along the major axis) when their
    largest scale exceeds ``densify_scale_threshold``.  Splats with opacity
    below ``prune_opacity_threshold`` are removed.  The splat count never
    exceeds ``max_splats``; when the cap binds, the highest-gradient
    candidates densify first.

    Args:
        scene: Current scene.
        positional_gradients: (N,) accumulated per-splat gradient magnitudes.
        config: Thresholds and the splat-count cap.

    Returns:
        A new scene; the input is untouched.
    """
    positional_gradients = np.asarray(positional_gradients, dtype=np.float64).reshape(len(scene))
    keep = expit(scene.opacities_raw) >= config.prune_opacity_threshold

    over = (positional_gradients > config.densify_grad_threshold) & keep
    max_scale = np.exp(scene.scales_raw).max(axis=1)
    split_mask = over & (max_scale > config.densify_scale_threshold)
    clone_mask = over & ~split_mask

    candidates = np.nonzero(split_mask | clone_mask)[0]
    candidates = candidates[np.argsort(-positional_gradients[candidates], kind="stable")]
    # Both clone and split grow the count by one; cap-limited, highest gradient first.
    budget = max(config.max_splats - int(keep.sum()), 0)
    allowed = [int(i) for i in candidates[:budget]]

    means = [scene.means[keep]]
    scales = [scene.scales_raw[keep]]
    rots = [scene.rotations_raw[keep]]
    ops = [scene.opacities_raw[keep]]
    sh = [scene.sh[keep]]

    split_rows = [i for i in allowed if split_mask[i]]
    clone_rows = [i for i in allowed if clone_mask[i]]

    if clone_rows:
        rows = np.array(clone_rows)
        means.append(scene.means[rows])
        scales.append(scene.scales_raw[rows])
        rots.append(scene.rotations_raw[rows])
        ops.append(scene.opacities_raw[rows])
        sh.append(scene.sh[rows])

    drop_split = np.zeros(len(scene), dtype=bool)
    if split_rows:
        rows = np.array(split_rows)
        drop_split[rows] = True
        q = scene.rotations_raw[rows]
        q = q / np.linalg.norm(q, axis=1, keepdims=True)
        rmats = quats_to_rotmats(q)
        s = np.exp(scene.scales_raw[rows])
        major = np.argmax(s, axis=1)
        axis = rmats[np.arange(len(rows)), :, major]
        offset = 0.5 * s[np.arange(len(rows)), major][:, None] * axis
        new_scale = scene.scales_raw[rows] - SPLIT_SCALE_SHRINK
        for sign in (+1.0, -1.0):
            means.append(scene.means[rows] + sign * offset)
            scales.append(new_scale)
            rots.append(scene.rotations_raw[rows])
            ops.append(scene.opacities_raw[rows])
            sh.append(scene.sh[rows])

    if np.any(drop_split):
        survivors = keep & ~drop_split
        means[0] = scene.means[survivors]
        scales[0] = scene.scales_raw[survivors]
        rots[0] = scene.rotations_raw[survivors]
        ops[0] = scene.opacities_raw[survivors]
        sh[0] = scene.sh[survivors]

    return Scene(
        np.concatenate(means),
        np.concatenate(scales),
        np.concatenate(rots),
        np.concatenate(ops),
        np.concatenate(sh),
        scene.sh_degree,
        scene.background.copy(),
    )
