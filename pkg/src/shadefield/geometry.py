"""Pinhole camera geometry: depth unprojection and plane-fit normals.

Camera space is x right, y down, z forward. Depth is the z coordinate.
World space has +y up; azimuth 0 is +x and 90 degrees is +z.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")

    @classmethod
    def from_fov(cls, fov_deg: float, width: int, height: int) -> "Intrinsics":
        """Square pixels, horizontal field of view, principal point at the image center."""
        if not 0 < fov_deg < 180:
            raise ValueError(f"fov must be in (0, 180), got {fov_deg}")
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def look_rotation(yaw_deg: float, pitch_deg: float) -> np.ndarray:
    """Camera-to-world rotation for a camera at the given azimuth, pitched down by pitch_deg."""
    yaw, pitch = np.radians(yaw_deg), np.radians(pitch_deg)
    forward = np.array([np.cos(pitch) * np.cos(yaw), -np.sin(pitch), np.cos(pitch) * np.sin(yaw)])
    right = np.array([-np.sin(yaw), 0.0, np.cos(yaw)])
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


@dataclass(frozen=True)
class Camera:
    """Intrinsics plus a pose; world = rotation @ cam + position."""

    intrinsics: Intrinsics
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def ground_plane_cam(self, height: float = 0.0) -> np.ndarray:
        """Plane y_world = height as (a, b, c, d) in camera space, normal pointing up."""
        n = np.asarray(self.rotation).T @ np.array([0.0, 1.0, 0.0])
        return np.array([n[0], n[1], n[2], float(np.asarray(self.position)[1]) - height])

    def to_dict(self) -> dict:
        k = self.intrinsics
        return {
            "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height,
            "rotation": np.asarray(self.rotation, dtype=float).tolist(),
            "position": np.asarray(self.position, dtype=float).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        k = Intrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                       int(d["width"]), int(d["height"]))
        rot = np.asarray(d.get("rotation", np.eye(3)), dtype=float)
        pos = np.asarray(d.get("position", np.zeros(3)), dtype=float)
        if rot.shape != (3, 3) or pos.shape != (3,):
            raise ValueError("camera rotation must be 3x3 and position a 3-vector")
        return cls(k, rot, pos)


@dataclass
class DepthMap:
    values: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if self.values.shape != self.valid_mask.shape or self.values.ndim != 2:
            raise ValueError("depth values and valid mask must be matching H x W arrays")
        v = self.values[self.valid_mask]
        if not np.all(np.isfinite(v) & (v > 0)):
            raise ValueError("valid depth must be finite and positive")

    @classmethod
    def from_array(cls, values: np.ndarray) -> "DepthMap":
        """Pixels that are non-finite or <= 0 become invalid."""
        values = np.asarray(values, dtype=np.float64)
        valid = np.isfinite(values) & (values > 0)
        return cls(np.where(valid, values, 0.0), valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def digest(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(np.where(self.valid_mask, self.values, 0.0)).tobytes())
        return h.hexdigest()[:16]


@dataclass
class NormalMap:
    normals: np.ndarray  # H x W x 3, camera space
    valid_mask: np.ndarray


def _check_dims(depth: DepthMap, k: Intrinsics) -> None:
    if depth.shape != (k.height, k.width):
        raise ValueError(f"depth is {depth.shape[1]}x{depth.shape[0]} but intrinsics expect "
                         f"{k.width}x{k.height}")


def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    return u, v


def unproject(depth: DepthMap, k: Intrinsics) -> np.ndarray:
    """H x W x 3 camera-space points; invalid pixels are zero."""
    _check_dims(depth, k)
    u, v = pixel_grid(*depth.shape)
    z = np.where(depth.valid_mask, depth.values, 0.0)
    return np.stack([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z], axis=-1)


def project(points: np.ndarray, k: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    z = points[..., 2]
    return k.fx * points[..., 0] / z + k.cx, k.fy * points[..., 1] / z + k.cy


def _shifted(a: np.ndarray, dy: int, dx: int, fill) -> np.ndarray:
    """out[y, x] = a[y + dy, x + dx], with out-of-range filled."""
    h, w = a.shape[:2]
    out = np.full_like(a, fill)
    ys, yd = slice(max(dy, 0), h + min(dy, 0)), slice(max(-dy, 0), h + min(-dy, 0))
    xs, xd = slice(max(dx, 0), w + min(dx, 0)), slice(max(-dx, 0), w + min(-dx, 0))
    out[yd, xd] = a[ys, xs]
    return out


def plane_fit(points: np.ndarray, valid: np.ndarray, window_radius: int,
              max_jump: np.ndarray | None = None):
    """Windowed total-least-squares plane fit.

    A neighbor at pixel distance r joins the window only if its depth differs
    from the center's by at most r * max_jump (per-pixel array, None for no
    gate). Returns (normals, counts, residual) where residual is the RMS
    point-to-plane distance in each window. Normals are not yet oriented.
    """
    h, w = valid.shape
    offsets = [(dy, dx) for dy in range(-window_radius, window_radius + 1)
               for dx in range(-window_radius, window_radius + 1)]
    count = np.zeros((h, w))
    s1 = np.zeros((h, w, 3))
    s2 = np.zeros((h, w, 3, 3))
    # accumulate relative to the center point to keep the covariance well conditioned
    for dy, dx in offsets:
        m = _shifted(valid, dy, dx, False) & valid
        if max_jump is not None:
            dz = np.abs(_shifted(points[..., 2], dy, dx, 0.0) - points[..., 2])
            m &= dz <= np.hypot(dy, dx) * max_jump
        d = np.where(m[..., None], _shifted(points, dy, dx, 0.0) - points, 0.0)
        count += m
        s1 += d
        s2 += d[..., :, None] * d[..., None, :]
    n = np.maximum(count, 1)[..., None]
    mean = s1 / n
    cov = s2 / n[..., None] - mean[..., :, None] * mean[..., None, :]
    evals, evecs = np.linalg.eigh(cov)
    return evecs[..., :, 0], count, np.sqrt(np.maximum(evals[..., 0], 0.0)), points + mean


def normals_from_depth(depth: DepthMap, k: Intrinsics, window_radius: int = 2,
                       max_slope_deg: float | None = 80.0, adaptive: bool = True) -> NormalMap:
    """Plane-fit normals oriented toward the camera.

    Neighbors across a depth jump steeper than `max_slope_deg` (relative to the
    pixel footprint) are left out of the fit, so windows do not straddle
    separate surfaces. With `adaptive`, a pixel whose centered window fits
    poorly (a crease) takes the normal of the best-fitting window among those
    that contain it. Pixels with fewer than 3 points in their window are invalid.
    """
    if window_radius < 1:
        raise ValueError("window_radius must be >= 1")
    if not depth.valid_mask.any():
        raise ValueError("depth map has no valid pixels")
    pts = unproject(depth, k)
    max_jump = None
    if max_slope_deg is not None:
        max_jump = np.tan(np.radians(max_slope_deg)) * pts[..., 2] / min(k.fx, k.fy)
    normals, count, residual, centroid = plane_fit(pts, depth.valid_mask, window_radius, max_jump)
    if adaptive:
        footprint = pts[..., 2] / min(k.fx, k.fy)
        normals = _adaptive_select(pts, normals, residual, centroid, count >= 3, depth.valid_mask,
                                   footprint, window_radius)
    flip = np.sum(normals * pts, axis=-1) > 0
    normals = np.where(flip[..., None], -normals, normals)
    valid = depth.valid_mask & (count >= 3)
    normals = np.where(valid[..., None], normals, 0.0)
    return NormalMap(normals, valid)


def _adaptive_select(points, normals, residual, centroid, ok, valid, footprint, radius):
    res = np.where(ok, residual, np.inf)
    best_res = res.copy()
    best_n = normals.copy()
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            r = _shifted(res, dy, dx, np.inf)
            n = _shifted(normals, dy, dx, 0.0)
            # the pixel itself must lie on the shifted window's plane
            off = np.abs(np.sum(n * (points - _shifted(centroid, dy, dx, 0.0)), axis=-1))
            r = np.where(off <= 0.5 * footprint, r, np.inf)
            better = r < best_res
            best_res = np.where(better, r, best_res)
            best_n = np.where(better[..., None], n, best_n)
    # keep the centered fit unless it is clearly worse than the best shifted one
    keep = (res <= 0.05 * footprint) | (res <= 5.0 * best_res) | ~np.isfinite(best_res)
    return np.where((keep & valid)[..., None], normals, best_n)


def camera_digest(camera: Camera) -> str:
    return hashlib.sha256(json.dumps(camera.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
