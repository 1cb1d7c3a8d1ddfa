"""Conditioning tests: fusion algebra, dimension contracts, attention properties."""

from __future__ import annotations

import numpy as np
import pytest

from resplat.conditioning import (
    AttentionWeights,
    FusionProjector,
    TokenMatrix,
    attention_row_sums,
    cross_attention,
    project_and_fuse,
    project_branch_2d,
    project_branch_3d,
    softmax_rows,
)
from resplat.errors import ShapeMismatchError

# Small feature dims keep unit tests quick; the full 2048/1024 -> 3072
# contract is exercised once below and in the acceptance suite.


@pytest.fixture(scope="module")
def projector():
    return FusionProjector.random(seed=7)


def test_fusion_dimension_contract(projector, rng):
    # Two reference views of 925 tokens each, concatenated row-wise.
    t3d = TokenMatrix(rng.normal(size=(2 * 925, 2048)).astype(np.float32))
    t2d = TokenMatrix(rng.normal(size=(2 * 925, 1024)).astype(np.float32))
    fused = project_and_fuse(t3d, t2d, projector)
    assert (fused.rows, fused.cols) == (1850, 3072)


def test_fusion_is_sum_of_branches(projector, rng):
    t3d = TokenMatrix(rng.normal(size=(12, 2048)).astype(np.float32))
    t2d = TokenMatrix(rng.normal(size=(12, 1024)).astype(np.float32))
    fused = project_and_fuse(t3d, t2d, projector)
    expected = project_branch_3d(t3d, projector) + project_branch_2d(t2d, projector)
    np.testing.assert_allclose(fused.data, expected, atol=1e-6)


def test_fusion_zero_norm_scale_kills_data_dependence(rng):
    proj = FusionProjector.random(seed=1)
    proj.norm3d_scale = np.zeros_like(proj.norm3d_scale)
    proj.norm2d_scale = np.zeros_like(proj.norm2d_scale)
    proj.norm3d_shift = np.full_like(proj.norm3d_shift, 0.25)
    proj.norm2d_shift = np.full_like(proj.norm2d_shift, -0.75)
    t3d = TokenMatrix(rng.normal(size=(5, 2048)).astype(np.float32))
    t2d = TokenMatrix(rng.normal(size=(5, 1024)).astype(np.float32))
    fused = project_and_fuse(t3d, t2d, proj)
    np.testing.assert_allclose(fused.data, np.full((5, 3072), -0.5, dtype=np.float32), atol=1e-7)


def test_fusion_row_count_mismatch(projector, rng):
    t3d = TokenMatrix(rng.normal(size=(4, 2048)).astype(np.float32))
    t2d = TokenMatrix(rng.normal(size=(5, 1024)).astype(np.float32))
    with pytest.raises(ShapeMismatchError):
        project_and_fuse(t3d, t2d, projector)


def test_projector_shape_contract_enforced():
    with pytest.raises(ShapeMismatchError):
        FusionProjector(
            w3d=np.zeros((10, 3072)),
            b3d=np.zeros(3072),
            w2d=np.zeros((1024, 3072)),
            b2d=np.zeros(3072),
            norm3d_scale=np.ones(3072),
            norm3d_shift=np.zeros(3072),
            norm2d_scale=np.ones(3072),
            norm2d_shift=np.zeros(3072),
        )


def test_token_matrix_rejects_non_finite():
    with pytest.raises(ValueError):
        TokenMatrix(np.array([[1.0, np.nan]]))


# ---------------------------------------------------------------------------
# cross attention


def test_single_fusion_token_attention(rng):
    d = 32
    weights = AttentionWeights.random(d, seed=3)
    view = TokenMatrix(rng.normal(size=(6, d)).astype(np.float32))
    fusion = TokenMatrix(rng.normal(size=(1, d)).astype(np.float32))
    out = cross_attention(view, fusion, weights)
    # Softmax over one key is 1: every row's attention output (pre-residual)
    # equals that token's value projection.
    expected_delta = (
        fusion.data.astype(np.float64) @ weights.wv.astype(np.float64) @ weights.wo.astype(np.float64)
    )
    np.testing.assert_allclose(
        out.data - view.data.astype(np.float64), np.broadcast_to(expected_delta, (6, d)), atol=1e-5
    )


def test_softmax_rows_sum_to_one(rng):
    d = 16
    weights = AttentionWeights.random(d, seed=5)
    view = TokenMatrix(rng.normal(size=(9, d)).astype(np.float32))
    fusion = TokenMatrix(rng.normal(size=(7, d)).astype(np.float32))
    sums = attention_row_sums(view, fusion, weights)
    np.testing.assert_allclose(sums, 1.0, atol=1e-6)


def test_attention_permutation_invariance(rng):
    d = 24
    weights = AttentionWeights.random(d, seed=9)
    view = TokenMatrix(rng.normal(size=(5, d)).astype(np.float32))
    fusion_rows = rng.normal(size=(11, d)).astype(np.float32)
    out = cross_attention(view, TokenMatrix(fusion_rows), weights)
    perm = rng.permutation(11)
    out_perm = cross_attention(view, TokenMatrix(fusion_rows[perm]), weights)
    np.testing.assert_allclose(out.data, out_perm.data, atol=1e-6)


def test_attention_output_shape_matches_view(rng):
    d = 16
    weights = AttentionWeights.random(d, seed=2)
    for m in (1, 3, 20):
        view = TokenMatrix(rng.normal(size=(4, d)).astype(np.float32))
        fusion = TokenMatrix(rng.normal(size=(m, d)).astype(np.float32))
        out = cross_attention(view, fusion, weights)
        assert out.data.shape == (4, d)


def test_scaling_fusion_changes_logits_but_rows_still_normalize(rng):
    d = 16
    weights = AttentionWeights.random(d, seed=4)
    view = TokenMatrix(rng.normal(size=(5, d)).astype(np.float32))
    fusion = rng.normal(size=(6, d)).astype(np.float32)
    base = cross_attention(view, TokenMatrix(fusion), weights)
    scaled = cross_attention(view, TokenMatrix(3.0 * fusion), weights)
    assert not np.allclose(base.data, scaled.data)  # values shift
    np.testing.assert_allclose(
        attention_row_sums(view, TokenMatrix(3.0 * fusion), weights), 1.0, atol=1e-6
    )


def test_attention_dimension_mismatch(rng):
    weights = AttentionWeights.random(16, seed=1)
    with pytest.raises(ShapeMismatchError):
        cross_attention(
            TokenMatrix(rng.normal(size=(3, 8)).astype(np.float32)),
            TokenMatrix(rng.normal(size=(3, 16)).astype(np.float32)),
            weights,
        )
    with pytest.raises(ShapeMismatchError):
        cross_attention(
            TokenMatrix(rng.normal(size=(3, 16)).astype(np.float32)),
            TokenMatrix(rng.normal(size=(3, 16)).astype(np.float32)),
            weights,
            num_heads=5,
        )


def test_multi_head_matches_single_head_normalization(rng):
    d = 32
    weights = AttentionWeights.random(d, seed=8)
    view = TokenMatrix(rng.normal(size=(4, d)).astype(np.float32))
    fusion = TokenMatrix(rng.normal(size=(6, d)).astype(np.float32))
    out = cross_attention(view, fusion, weights, num_heads=4)
    assert out.data.shape == (4, d)
    assert np.all(np.isfinite(out.data))


def test_softmax_rows_numerically_stable():
    logits = np.array([[1000.0, 1000.0, -1000.0]])
    probs = softmax_rows(logits)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    assert np.all(np.isfinite(probs))
