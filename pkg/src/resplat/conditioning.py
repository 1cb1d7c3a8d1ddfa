"""Token-fusion and cross-attention numerics at toy scale.

Two linear+LayerNorm branches map geometric (2048-d) and semantic (1024-d)
reference tokens into a shared 3072-d space and sum them into fusion tokens;
a cross-attention block then updates view tokens with the fusion tokens as
keys and values (residual update).  Weights are randomly initialized from a
seed: the module validates the conditioning algebra and its dimension
contracts, not learned behavior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError

DIM_3D = 2048
DIM_2D = 1024
DIM_FUSED = 3072
TOKENS_PER_VIEW = 925

LAYERNORM_EPS = 1e-5


@dataclass
class TokenMatrix:
    """A (rows x cols) block of finite float tokens."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ShapeMismatchError(f"token matrix must be 2D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("token matrix contains non-finite entries")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


def _as_tokens(x) -> TokenMatrix:
    return x if isinstance(x, TokenMatrix) else TokenMatrix(np.asarray(x))


@dataclass
class FusionProjector:
    """Linear + LayerNorm branch weights for the two token streams.

    Shapes are fixed by the dimension contract: 2048 -> 3072 for geometric
    tokens and 1024 -> 3072 for semantic tokens, with per-feature norm scale
    and shift over the 3072 axis.
    """

    w3d: np.ndarray
    b3d: np.ndarray
    w2d: np.ndarray
    b2d: np.ndarray
    norm3d_scale: np.ndarray
    norm3d_shift: np.ndarray
    norm2d_scale: np.ndarray
    norm2d_shift: np.ndarray

    def __post_init__(self):
        expected = {
            "w3d": (DIM_3D, DIM_FUSED),
            "b3d": (DIM_FUSED,),
            "w2d": (DIM_2D, DIM_FUSED),
            "b2d": (DIM_FUSED,),
            "norm3d_scale": (DIM_FUSED,),
            "norm3d_shift": (DIM_FUSED,),
            "norm2d_scale": (DIM_FUSED,),
            "norm2d_shift": (DIM_FUSED,),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float32)
            if arr.shape != shape:
                raise ShapeMismatchError(f"{name} must have shape {shape}, got {arr.shape}")
            setattr(self, name, arr)

    @classmethod
    def random(cls, seed: int = 0) -> "FusionProjector":
        rng = np.random.default_rng(seed)
        return cls(
            w3d=rng.normal(0.0, DIM_3D**-0.5, size=(DIM_3D, DIM_FUSED)),
            b3d=np.zeros(DIM_FUSED),
            w2d=rng.normal(0.0, DIM_2D**-0.5, size=(DIM_2D, DIM_FUSED)),
            b2d=np.zeros(DIM_FUSED),
            norm3d_scale=np.ones(DIM_FUSED),
            norm3d_shift=np.zeros(DIM_FUSED),
            norm2d_scale=np.ones(DIM_FUSED),
            norm2d_shift=np.zeros(DIM_FUSED),
        )


def layer_normalize(x: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Normalization over the feature axis with eps 1e-5, then scale and shift."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return ((x - mean) / np.sqrt(var + LAYERNORM_EPS)) * scale + shift


def project_branch_3d(t3d: TokenMatrix, proj: FusionProjector) -> np.ndarray:
    t3d = _as_tokens(t3d)
    if t3d.cols != DIM_3D:
        raise ShapeMismatchError(f"geometric tokens must have {DIM_3D} features, got {t3d.cols}")
    h = t3d.data.astype(np.float64) @ proj.w3d.astype(np.float64) + proj.b3d
    return layer_normalize(h, proj.norm3d_scale, proj.norm3d_shift)


def project_branch_2d(t2d: TokenMatrix, proj: FusionProjector) -> np.ndarray:
    t2d = _as_tokens(t2d)
    if t2d.cols != DIM_2D:
        raise ShapeMismatchError(f"semantic tokens must have {DIM_2D} features, got {t2d.cols}")
    h = t2d.data.astype(np.float64) @ proj.w2d.astype(np.float64) + proj.b2d
    return layer_normalize(h, proj.norm2d_scale, proj.norm2d_shift)


def project_and_fuse(t3d: TokenMatrix, t2d: TokenMatrix, proj: FusionProjector) -> TokenMatrix:
    """Fusion tokens: LayerNorm(t3d w3d + b3d) + LayerNorm(t2d w2d + b2d).

    The two branches share a row count (the reference views' patch grid);
    fusion is their elementwise sum in the 3072-d space.
    """
    t3d = _as_tokens(t3d)
    t2d = _as_tokens(t2d)
    if t3d.rows != t2d.rows:
        raise ShapeMismatchError(
            f"token row counts differ: {t3d.rows} geometric vs {t2d.rows} semantic"
        )
    return TokenMatrix(project_branch_3d(t3d, proj) + project_branch_2d(t2d, proj))


@dataclass
class AttentionWeights:
    """Square Q/K/V/output projections for one cross-attention block."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    def __post_init__(self):
        shapes = {name: np.asarray(getattr(self, name), dtype=np.float32) for name in ("wq", "wk", "wv", "wo")}
        dim = shapes["wq"].shape[0]
        for name, arr in shapes.items():
            if arr.shape != (dim, dim):
                raise ShapeMismatchError(f"{name} must be square ({dim}, {dim}), got {arr.shape}")
            setattr(self, name, arr)

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    @classmethod
    def random(cls, dim: int, seed: int = 0) -> "AttentionWeights":
        rng = np.random.default_rng(seed)
        scale = dim**-0.5
        return cls(*(rng.normal(0.0, scale, size=(dim, dim)) for _ in range(4)))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_attention(
    t_view: TokenMatrix,
    t_fusion: TokenMatrix,
    weights: AttentionWeights,
    num_heads: int = 1,
) -> TokenMatrix:
    """Residual cross-attention update of the view tokens.

    View tokens form the queries; fusion tokens act as keys and values:
    out = t_view + softmax(Q K^T / sqrt(d)) V Wo.
    """
    t_view = _as_tokens(t_view)
    t_fusion = _as_tokens(t_fusion)
    d = weights.dim
    if t_view.cols != d or t_fusion.cols != d:
        raise ShapeMismatchError(
            f"token feature dims ({t_view.cols}, {t_fusion.cols}) do not match weights ({d})"
        )
    if d % num_heads != 0:
        raise ShapeMismatchError(f"feature dim {d} not divisible by {num_heads} heads")
    head_dim = d // num_heads

    view = t_view.data.astype(np.float64)
    fusion = t_fusion.data.astype(np.float64)
    q = view @ weights.wq.astype(np.float64)
    k = fusion @ weights.wk.astype(np.float64)
    v = fusion @ weights.wv.astype(np.float64)

    out = np.empty((view.shape[0], d))
    for h in range(num_heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        logits = q[:, cols] @ k[:, cols].T / np.sqrt(head_dim)
        out[:, cols] = softmax_rows(logits) @ v[:, cols]
    return TokenMatrix(view + out @ weights.wo.astype(np.float64))


def attention_row_sums(t_view: TokenMatrix, t_fusion: TokenMatrix, weights: AttentionWeights) -> np.ndarray:
    """Softmax row sums (single head), exposed for normalization checks."""
    t_view = _as_tokens(t_view)
    t_fusion = _as_tokens(t_fusion)
    q = t_view.data.astype(np.float64) @ weights.wq.astype(np.float64)
    k = t_fusion.data.astype(np.float64) @ weights.wk.astype(np.float64)
    logits = q @ k.T / np.sqrt(weights.dim)
    return softmax_rows(logits).sum(axis=1)
