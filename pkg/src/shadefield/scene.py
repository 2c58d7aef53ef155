"""Analytic scenes of spheres, boxes and capsules resting on the ground plane y = 0."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Camera, DepthMap, Intrinsics, NormalMap, look_rotation, pixel_grid


@dataclass(frozen=True)
class Primitive:
    """shape: 'sphere' (size = radius), 'box' (size = full extents x, y, z) or
    'capsule' (size = (radius, height of the straight segment)). `center` is
    the world-space center; `yaw_deg` turns boxes about +y."""

    shape: str
    center: tuple
    size: tuple
    albedo: tuple = (0.8, 0.8, 0.8)
    checker: tuple | None = None  # (second color rgb, square size in meters)
    yaw_deg: float = 0.0

    def lowest_point(self) -> float:
        c = np.asarray(self.center, float)
        if self.shape == "sphere":
            return c[1] - self.size[0]
        if self.shape == "box":
            return c[1] - 0.5 * self.size[1]
        if self.shape == "capsule":
            return c[1] - 0.5 * self.size[1] - self.size[0]
        raise ValueError(f"unknown primitive shape {self.shape!r}")

    def to_dict(self) -> dict:
        return {"shape": self.shape, "center": list(self.center), "size": list(self.size),
                "albedo": list(self.albedo), "checker": None if self.checker is None else
                [list(self.checker[0]), self.checker[1]], "yaw_deg": self.yaw_deg}


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple
    ground_albedo: tuple = (0.5, 0.5, 0.5)
    fov_deg: float = 50.0
    cam_position: tuple = (-3.0, 1.2, 0.0)
    cam_yaw_deg: float = 0.0
    cam_pitch_deg: float = 15.0
    name: str = "scene"

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("scene has no primitives")
        for p in self.primitives:
            if p.lowest_point() < -1e-9:
                raise ValueError(f"{p.shape} at {p.center} extends below the ground plane")

    def camera(self, width: int, height: int) -> Camera:
        return Camera(Intrinsics.from_fov(self.fov_deg, width, height),
                      look_rotation(self.cam_yaw_deg, self.cam_pitch_deg),
                      np.asarray(self.cam_position, dtype=float))

    def to_dict(self) -> dict:
        return {"name": self.name, "primitives": [p.to_dict() for p in self.primitives],
                "ground_albedo": list(self.ground_albedo), "fov_deg": self.fov_deg,
                "cam_position": list(self.cam_position), "cam_yaw_deg": self.cam_yaw_deg,
                "cam_pitch_deg": self.cam_pitch_deg}


def _hit_sphere(o, d, center, radius):
    oc = o - np.asarray(center, float)
    a = np.sum(d * d, axis=-1)
    b = 2 * np.sum(oc * d, axis=-1)
    c = np.sum(oc * oc) - radius ** 2
    disc = b * b - 4 * a * c
    sq = np.sqrt(np.maximum(disc, 0))
    t = (-b - sq) / (2 * a)
    t = np.where(t > 1e-9, t, (-b + sq) / (2 * a))
    t = np.where((disc >= 0) & (t > 1e-9), t, np.inf)
    n = (o + t[..., None] * d - center) / radius
    return t, n


def _hit_box(o, d, center, size, yaw_deg):
    yaw = np.radians(yaw_deg)
    # local axes of the box in world space
    axes = np.array([[np.cos(yaw), 0, np.sin(yaw)], [0, 1, 0], [-np.sin(yaw), 0, np.cos(yaw)]])
    lo_ = (o - np.asarray(center, float)) @ axes.T
    ld = d @ axes.T
    half = 0.5 * np.asarray(size, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / ld
        t1 = (-half - lo_) * inv
        t2 = (half - lo_) * inv
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    tmin = np.where(np.isnan(tmin), -np.inf, tmin)
    tmax = np.where(np.isnan(tmax), np.inf, tmax)
    t_near = tmin.max(axis=-1)
    t_far = tmax.min(axis=-1)
    hit = (t_near <= t_far) & (t_near > 1e-9)
    t = np.where(hit, t_near, np.inf)
    axis = np.argmax(tmin, axis=-1)
    sign = -np.sign(np.take_along_axis(ld, axis[..., None], axis=-1)[..., 0])
    n_local = np.zeros(d.shape)
    np.put_along_axis(n_local, axis[..., None], sign[..., None], axis=-1)
    return t, n_local @ axes


def _hit_capsule(o, d, center, radius, height):
    c = np.asarray(center, float)
    a_pt = c - np.array([0, height / 2, 0])
    # infinite vertical cylinder through the segment
    oc = o - a_pt
    dx, dz = d[..., 0], d[..., 2]
    qa = dx * dx + dz * dz
    qb = 2 * (oc[..., 0] * dx + oc[..., 2] * dz)
    qc = oc[..., 0] ** 2 + oc[..., 2] ** 2 - radius ** 2
    disc = qb * qb - 4 * qa * qc
    with np.errstate(divide="ignore", invalid="ignore"):
        tc = (-qb - np.sqrt(np.maximum(disc, 0))) / (2 * qa)
    y = oc[..., 1] + tc * d[..., 1]
    ok = (disc >= 0) & (qa > 1e-12) & (tc > 1e-9) & (y >= 0) & (y <= height)
    t = np.where(ok, tc, np.inf)
    p = o + np.where(np.isfinite(t), t, 0)[..., None] * d
    n = p - a_pt
    n[..., 1] = 0
    n = n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-12)
    for end in (a_pt, a_pt + np.array([0, height, 0])):
        ts, ns = _hit_sphere(o, d, end, radius)
        closer = ts < t
        t = np.where(closer, ts, t)
        n = np.where(closer[..., None], ns, n)
    return t, n


def _albedo_at(prim: Primitive, p: np.ndarray) -> np.ndarray:
    base = np.broadcast_to(np.asarray(prim.albedo, float), p.shape).copy()
    if prim.checker is not None:
        color, sq = prim.checker
        parity = np.sum(np.floor(p / sq), axis=-1).astype(int) % 2 == 1
        base[parity] = np.asarray(color, float)
    return base


@dataclass
class Raster:
    depth: DepthMap
    normals: NormalMap
    albedo: np.ndarray
    mask: np.ndarray      # object pixels
    camera: Camera
    ground: np.ndarray = field(default=None)  # ground pixels (when rasterized)


def rasterize(scene: SceneSpec, width: int, height: int, include_ground: bool = False) -> Raster:
    """Cast one camera ray per pixel center against the scene's analytic surfaces."""
    cam = scene.camera(width, height)
    k = cam.intrinsics
    u, v = pixel_grid(height, width)
    d_cam = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
    d = d_cam @ np.asarray(cam.rotation).T   # z-component of d_cam is 1, so t equals depth
    o = np.asarray(cam.position, float)
    best_t = np.full((height, width), np.inf)
    best_n = np.zeros((height, width, 3))
    best_id = np.full((height, width), -1)
    for i, prim in enumerate(scene.primitives):
        if prim.shape == "sphere":
            t, n = _hit_sphere(o, d, prim.center, prim.size[0])
        elif prim.shape == "box":
            t, n = _hit_box(np.broadcast_to(o, d.shape), d, prim.center, prim.size, prim.yaw_deg)
        elif prim.shape == "capsule":
            t, n = _hit_capsule(o, d, prim.center, prim.size[0], prim.size[1])
        else:
            raise ValueError(f"unknown primitive shape {prim.shape!r}")
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_n = np.where(closer[..., None], n, best_n)
        best_id = np.where(closer, i, best_id)
    mask = np.isfinite(best_t)
    ground = np.zeros_like(mask)
    if include_ground:
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = np.where(d[..., 1] < 0, -o[1] / d[..., 1], np.inf)
        ground = (tg < best_t) & np.isfinite(tg)
        best_t = np.where(ground, tg, best_t)
        best_n = np.where(ground[..., None], np.array([0.0, 1.0, 0.0]), best_n)
        mask = mask & ~ground
    valid = np.isfinite(best_t)
    p = o + np.where(valid, best_t, 0)[..., None] * d
    albedo = np.zeros((height, width, 3))
    for i, prim in enumerate(scene.primitives):
        sel = mask & (best_id == i)
        albedo[sel] = _albedo_at(prim, p[sel])
    albedo[ground] = np.asarray(scene.ground_albedo, float)
    n_cam = best_n @ np.asarray(cam.rotation)
    n_cam = np.where(valid[..., None], n_cam, 0.0)
    depth = DepthMap(np.where(valid, best_t, 0.0), valid)
    return Raster(depth, NormalMap(n_cam, valid), albedo, mask, cam, ground)
