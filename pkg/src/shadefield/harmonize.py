"""Albedo recovery, re-rendering and the foreground harmonization pipeline.

All math is in linear radiance; images are H x W x 3.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import distance_transform_edt

from .envlight import IlluminationDescriptor
from .geometry import Camera, DepthMap, normals_from_depth
from .shading import ShadowConfig, compose_shading, shading_bases

DEFAULT_EPS = 1e-3


def albedo_from_image(img: np.ndarray, shading: np.ndarray, eps: float = DEFAULT_EPS,
                      mask: np.ndarray | None = None, fill_shadows: bool = True) -> np.ndarray:
    """Lambertian inversion clamp(img / max(S, eps), 0, 1).

    With fill_shadows, channels where S < eps take the albedo of the nearest
    pixel (inside `mask`, if given) whose shading is at least eps.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    img = np.asarray(img, dtype=np.float64)
    shading = np.asarray(shading, dtype=np.float64)
    if img.shape != shading.shape:
        raise ValueError(f"image {img.shape} and shading {shading.shape} are not aligned")
    albedo = np.clip(img / np.maximum(shading, eps), 0.0, 1.0)
    if not fill_shadows:
        return albedo
    region = np.ones(img.shape[:2], bool) if mask is None else np.asarray(mask) > 0.5
    for c in range(img.shape[2]):
        dark = (shading[..., c] < eps) & region
        source = (shading[..., c] >= eps) & region
        if not dark.any() or not source.any():
            continue
        _, (iy, ix) = distance_transform_edt(~source, return_indices=True)
        albedo[..., c] = np.where(dark, albedo[iy, ix, c], albedo[..., c])
    return albedo


def render_image(albedo: np.ndarray, shading: np.ndarray) -> np.ndarray:
    albedo, shading = np.asarray(albedo, np.float64), np.asarray(shading, np.float64)
    if albedo.shape != shading.shape:
        raise ValueError(f"albedo {albedo.shape} and shading {shading.shape} are not aligned")
    return albedo * shading


def composite(fg: np.ndarray, bg: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """m * fg + (1 - m) * bg; binary masks select pixels exactly."""
    fg, bg = np.asarray(fg, np.float64), np.asarray(bg, np.float64)
    m = np.asarray(mask)
    if fg.shape != bg.shape or m.shape != fg.shape[:2]:
        raise ValueError("foreground, background and mask are not aligned")
    if m.dtype == bool:
        return np.where(m[..., None], fg, bg)
    m = m.astype(np.float64)[..., None]
    out = m * fg + (1 - m) * bg
    return np.where(m == 0, bg, np.where(m == 1, fg, out))


def harmonize(composite_img: np.ndarray, mask: np.ndarray, fg_depth: DepthMap,
              src_shading: np.ndarray, target: IlluminationDescriptor, camera: Camera,
              cfg: ShadowConfig = ShadowConfig(), K: int | None = None,
              eps: float = DEFAULT_EPS, window_radius: int = 2, return_parts: bool = False):
    """Re-render the masked foreground under `target` and paste it back.

    The foreground albedo comes from dividing the composite by the shading it
    was captured under; the new shading composes shadow-aware bases built from
    the foreground depth with the target descriptor.
    """
    mask = np.asarray(mask) > 0.5
    if not mask.any():
        raise ValueError("harmonization mask is empty")
    if K is not None and K != target.K:
        raise ValueError(f"requested K={K} but the target descriptor has {target.K} cells")
    depth = DepthMap(fg_depth.values, fg_depth.valid_mask & mask)
    normals = normals_from_depth(depth, camera.intrinsics, window_radius)
    bases = shading_bases(depth, normals, target.partition, cfg, camera)
    new_shading = compose_shading(bases, target)
    albedo = albedo_from_image(composite_img, src_shading, eps, mask)
    out = composite(render_image(albedo, new_shading), composite_img, mask)
    if return_parts:
        return out, {"albedo": albedo, "shading": new_shading, "bases": bases, "normals": normals}
    return out
