"""Foreground-masked image metrics and the training objectives as plain scalars.

Metric inputs are display-space images in [0, 1] (use `to_display` on linear
images first). Images are H x W or H x W x C.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .imageio import srgb_encode

PSNR_CAP_DB = 99.0
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
_SIGMA = 1.5
_RADIUS = 5  # 11 x 11 window


def to_display(linear: np.ndarray) -> np.ndarray:
    return srgb_encode(linear)


def _mask(mask: np.ndarray, shape) -> np.ndarray:
    m = np.asarray(mask) > 0.5
    if m.shape != tuple(shape[:2]):
        raise ValueError(f"mask shape {m.shape} does not match image {shape[:2]}")
    if not m.any():
        raise ValueError("mask is empty")
    return m


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def fmae(pred, gt, mask) -> float:
    pred, gt = _pair(pred, gt)
    m = _mask(mask, pred.shape)
    return float(np.mean(np.abs(pred[m] - gt[m])))


def masked_mse(pred, gt, mask) -> float:
    pred, gt = _pair(pred, gt)
    m = _mask(mask, pred.shape)
    return float(np.mean((pred[m] - gt[m]) ** 2))


def fpsnr(pred, gt, mask) -> float:
    mse = masked_mse(pred, gt, mask)
    if mse == 0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def _ssim_channel(x, y):
    blur = lambda a: gaussian_filter(a, _SIGMA, mode="reflect", truncate=_RADIUS / _SIGMA)
    mx, my = blur(x), blur(y)
    vx = blur(x * x) - mx * mx
    vy = blur(y * y) - my * my
    cxy = blur(x * y) - mx * my
    return ((2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)) / \
        ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))


def ssim_map(pred, gt) -> np.ndarray:
    """Gaussian-window SSIM map (11 x 11, sigma 1.5), averaged over channels."""
    pred, gt = _pair(pred, gt)
    if min(pred.shape[:2]) < 2 * _RADIUS + 1:
        raise ValueError(f"image {pred.shape[:2]} is smaller than the 11 x 11 SSIM window")
    if pred.ndim == 2:
        return _ssim_channel(pred, gt)
    return np.mean([_ssim_channel(pred[..., c], gt[..., c]) for c in range(pred.shape[2])], axis=0)


def ssim(pred, gt) -> float:
    return float(np.mean(ssim_map(pred, gt)))


def fssim(pred, gt, mask) -> float:
    m = _mask(mask, np.shape(pred))
    return float(np.mean(ssim_map(pred, gt)[m]))


def evaluate_pair(pred_linear, gt_linear, mask) -> dict:
    """All three foreground metrics on sRGB-encoded versions of linear images."""
    p, g = to_display(pred_linear), to_display(gt_linear)
    return {"fmae": fmae(p, g, mask), "fpsnr": fpsnr(p, g, mask), "fssim": fssim(p, g, mask),
            "pixel_count": int(np.count_nonzero(np.asarray(mask) > 0.5))}


def l_nr(S, S_hat, A, A_hat, I, I_hat, lam: float = 1.0) -> float:
    """L1 terms on shading, albedo and image plus lam * (1 - SSIM) for each."""
    total = 0.0
    for gt, pred in ((S, S_hat), (A, A_hat), (I, I_hat)):
        gt, pred = _pair(gt, pred)
        total += float(np.mean(np.abs(gt - pred)))
        total += lam * (1.0 - ssim(gt, pred))
    return total
