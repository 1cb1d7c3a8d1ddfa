"""Desk-scale Gaussian-splatting toolkit with restoration-in-the-loop reconstruction."""

from .bench import (
    BenchmarkScene,
    DenseCapture,
    MetricsReport,
    aggregate_report,
    build_res_scene,
    evaluate_scene,
)
from .conditioning import (
    AttentionWeights,
    FusionProjector,
    TokenMatrix,
    cross_attention,
    project_and_fuse,
)
from .losses import LossWeights, anneal_lambda, l1_loss, psnr, ssim, total_loss
from .optim import AdamState, TrainConfig, densify_and_prune, optimize_step
from .pipeline import (
    ReconJob,
    ReconResult,
    TrajectorySpec,
    filter_visible_points,
    fit_baseline,
    run_iterative_recon,
)
from .raster import (
    GradientBuffer,
    RenderConfig,
    RenderedFrame,
    render,
    render_backward,
    render_reference,
)
from .restorer import (
    BlendBackend,
    IdentityBackend,
    OracleBackend,
    RemoteBackend,
    RestorationRequest,
    RestorationResponse,
    restore,
)
from .scene import (
    CameraPose,
    GaussianSplat,
    Scene,
    build_covariance,
    eval_sh,
    project_gaussian,
)
from .trajectory import (
    OrbitPath,
    TrajectoryPlan,
    fit_orbit_path,
    interpolate_pose,
    sample_ellipse,
    sample_interpolation,
    sample_reference_guided,
)

__all__ = [
    "AdamState",
    "AttentionWeights",
    "BenchmarkScene",
    "BlendBackend",
    "CameraPose",
    "DenseCapture",
    "FusionProjector",
    "GaussianSplat",
    "GradientBuffer",
    "IdentityBackend",
    "LossWeights",
    "MetricsReport",
    "OracleBackend",
    "OrbitPath",
    "ReconJob",
    "ReconResult",
    "RemoteBackend",
    "RenderConfig",
    "RenderedFrame",
    "RestorationRequest",
    "RestorationResponse",
    "Scene",
    "TokenMatrix",
    "TrainConfig",
    "TrajectoryPlan",
    "TrajectorySpec",
    "aggregate_report",
    "anneal_lambda",
    "build_covariance",
    "build_res_scene",
    "cross_attention",
    "densify_and_prune",
    "eval_sh",
    "evaluate_scene",
    "filter_visible_points",
    "fit_baseline",
    "fit_orbit_path",
    "interpolate_pose",
    "l1_loss",
    "optimize_step",
    "project_and_fuse",
    "project_gaussian",
    "psnr",
    "render",
    "render_backward",
    "render_reference",
    "restore",
    "run_iterative_recon",
    "sample_ellipse",
    "sample_interpolation",
    "sample_reference_guided",
    "ssim",
    "total_loss",
]

__version__ = "0.1.0"
