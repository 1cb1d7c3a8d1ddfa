"""Photometric losses, image-quality metrics, and the annealed total objective.

SSIM uses the standard 11x11 Gaussian window (sigma 1.5) with C1 = 0.01^2 and
C2 = 0.03^2 on unit dynamic range, averaged over all positions after reflect
padding.  Its gradient is computed analytically alongside the value; the
reflect-pad convolution adjoint folds boundary gradients back onto their
source pixels so the gradient matches finite differences at the borders too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
_WINDOW_SIZE = 11
_WINDOW_SIGMA = 1.5
_PAD = _WINDOW_SIZE // 2

PSNR_CAP_DB = 100.0
_PSNR_MSE_FLOOR = 1e-10


def _gaussian_window() -> np.ndarray:
    x = np.arange(_WINDOW_SIZE) - _PAD
    k = np.exp(-0.5 * (x / _WINDOW_SIGMA) ** 2)
    return k / k.sum()


_KERNEL = _gaussian_window()


def _reflect_index(n: int) -> np.ndarray:
    if n <= _PAD:
        raise ShapeMismatchError(f"image axis of length {n} is too small for an 11x11 window")
    return np.concatenate(
        [np.arange(_PAD, 0, -1), np.arange(n), np.arange(n - 2, n - 2 - _PAD, -1)]
    )


def _valid_conv(x: np.ndarray, axis: int) -> np.ndarray:
    n = x.shape[axis] - _WINDOW_SIZE + 1
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(0, n)
    out = _KERNEL[0] * x[tuple(sl)]
    for u in range(1, _WINDOW_SIZE):
        sl[axis] = slice(u, u + n)
        out += _KERNEL[u] * x[tuple(sl)]
    return out


def _filter2(img: np.ndarray) -> np.ndarray:
    """Reflect-padded separable Gaussian filtering of a 2D image."""
    rows = _reflect_index(img.shape[0])
    cols = _reflect_index(img.shape[1])
    padded = img[rows][:, cols]
    return _valid_conv(_valid_conv(padded, 0), 1)


def _filter2_adjoint(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Adjoint of _filter2: scatter filtered-domain gradients back to pixels."""
    # Adjoint of a valid correlation is a full convolution (kernel symmetric).
    g = np.pad(grad, ((_WINDOW_SIZE - 1, _WINDOW_SIZE - 1), (0, 0)))
    g = _valid_conv(g, 0)
    g = np.pad(g, ((0, 0), (_WINDOW_SIZE - 1, _WINDOW_SIZE - 1)))
    g = _valid_conv(g, 1)
    # Fold the reflect padding: each padded row/col adds onto its source.
    rows = _reflect_index(shape[0])
    cols = _reflect_index(shape[1])
    tmp = np.zeros((shape[0], g.shape[1]))
    np.add.at(tmp, rows, g)
    out = np.zeros(shape)
    np.add.at(out.T, cols, tmp.T)
    return out


def _as_channels(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img[:, :, None]
    if img.ndim == 3:
        return img
    raise ShapeMismatchError(f"expected (H, W) or (H, W, C) image, got shape {img.shape}")


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")


def l1_loss(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference over all pixels and channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    return float(np.mean(np.abs(a - b)))


def l1_loss_grad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gradient of l1_loss with respect to a."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    return np.sign(a - b) / a.size


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity in [-1, 1], averaged over positions and channels."""
    return ssim_with_grad(a, b, need_grad=False)[0]


def ssim_with_grad(
    a: np.ndarray, b: np.ndarray, need_grad: bool = True
) -> tuple[float, np.ndarray | None]:
    """SSIM value and its analytic gradient with respect to ``a``."""
    a3 = _as_channels(a)
    b3 = _as_channels(b)
    _check_same_shape(a3, b3)
    h, w, channels = a3.shape
    n = a3.size
    total = 0.0
    grad = np.zeros_like(a3) if need_grad else None

    for c in range(channels):
        x = a3[:, :, c]
        y = b3[:, :, c]
        mu_x = _filter2(x)
        mu_y = _filter2(y)
        p_xx = _filter2(x * x)
        p_yy = _filter2(y * y)
        p_xy = _filter2(x * y)
        var_x = p_xx - mu_x * mu_x
        var_y = p_yy - mu_y * mu_y
        cov = p_xy - mu_x * mu_y

        lum_num = 2 * mu_x * mu_y + SSIM_C1
        lum_den = mu_x * mu_x + mu_y * mu_y + SSIM_C1
        cs_num = 2 * cov + SSIM_C2
        cs_den = var_x + var_y + SSIM_C2
        lum = lum_num / lum_den
        cs = cs_num / cs_den
        s = lum * cs
        total += float(s.sum())

        if need_grad:
            ds_dmu = cs * (2 * mu_y * lum_den - lum_num * 2 * mu_x) / (lum_den * lum_den)
            ds_dvarx = -s / cs_den
            ds_dcov = lum * 2 / cs_den
            g_mu = (ds_dmu - 2 * mu_x * ds_dvarx - mu_y * ds_dcov) / n
            g_pxx = ds_dvarx / n
            g_pxy = ds_dcov / n
            grad[:, :, c] = (
                _filter2_adjoint(g_mu, (h, w))
                + 2 * x * _filter2_adjoint(g_pxx, (h, w))
                + y * _filter2_adjoint(g_pxy, (h, w))
            )

    value = total / n
    if need_grad and np.asarray(a).ndim == 2:
        grad = grad[:, :, 0]
    return value, grad


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on unit range, capped at 100 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < _PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


@dataclass
class LossWeights:
    """Weights of the photometric objective and the generative-term ramp."""

    lambda_l1: float = 0.8
    lambda_ssim: float = 0.2
    lambda_gen_start: float = 0.0
    lambda_gen_end: float = 1.0
    anneal_span: int = 500

    def __post_init__(self):
        if min(self.lambda_l1, self.lambda_ssim, self.lambda_gen_start, self.lambda_gen_end) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_gen_start > self.lambda_gen_end:
            raise ValueError("lambda_gen_start must not exceed lambda_gen_end")
        if self.anneal_span < 1:
            raise ValueError("anneal_span must be a positive iteration count")


def anneal_lambda(iteration: int, weights: LossWeights) -> float:
    """Linear ramp of the generative weight, constant after ``anneal_span``."""
    if iteration <= 0:
        return weights.lambda_gen_start
    if iteration >= weights.anneal_span:
        return weights.lambda_gen_end
    frac = iteration / weights.anneal_span
    return weights.lambda_gen_start + frac * (weights.lambda_gen_end - weights.lambda_gen_start)


def photometric_loss(render: np.ndarray, target: np.ndarray, weights: LossWeights) -> float:
    """lambda_l1 * L1 + lambda_ssim * (1 - SSIM) for one image pair."""
    return weights.lambda_l1 * l1_loss(render, target) + weights.lambda_ssim * (
        1.0 - ssim(render, target)
    )


def photometric_loss_grad(
    render: np.ndarray, target: np.ndarray, weights: LossWeights
) -> tuple[float, np.ndarray]:
    """Photometric pair loss and its gradient with respect to the render."""
    ssim_val, ssim_grad = ssim_with_grad(render, target)
    value = weights.lambda_l1 * l1_loss(render, target) + weights.lambda_ssim * (1.0 - ssim_val)
    grad = weights.lambda_l1 * l1_loss_grad(render, target) - weights.lambda_ssim * ssim_grad
    return value, grad


@dataclass
class TotalLoss:
    """Combined objective value and per-image gradient scale factors."""

    value: float
    recon: float
    gen: float
    lambda_gen: float
    ref_scales: list[float]
    gen_scales: list[float]


def total_loss(
    renders_ref: list[np.ndarray],
    targets_ref: list[np.ndarray],
    renders_gen: list[np.ndarray],
    targets_gen: list[np.ndarray],
    iteration: int,
    weights: LossWeights,
) -> TotalLoss:
    """Annealed objective: mean reconstruction loss + lambda * mean generative loss.

    The generative term has the same photometric form as the reconstruction
    term but is evaluated on the fixed-novel-view pairs.  The returned scale
    factors are the weights each image's photometric gradient carries in the
    gradient of the total.
    """
    if len(renders_ref) != len(targets_ref) or len(renders_gen) != len(targets_gen):
        raise ShapeMismatchError("render/target list lengths differ")
    lam = anneal_lambda(iteration, weights)
    recon = (
        float(np.mean([photometric_loss(r, t, weights) for r, t in zip(renders_ref, targets_ref)]))
        if renders_ref
        else 0.0
    )
    gen = (
        float(np.mean([photometric_loss(r, t, weights) for r, t in zip(renders_gen, targets_gen)]))
        if renders_gen
        else 0.0
    )
    value = recon + lam * gen
    ref_scales = [1.0 / len(renders_ref)] * len(renders_ref) if renders_ref else []
    gen_scales = [lam / len(renders_gen)] * len(renders_gen) if renders_gen else []
    return TotalLoss(value, recon, gen, lam, ref_scales, gen_scales)
