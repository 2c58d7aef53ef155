"""Shadow-aware Lambertian shading bases and their composition with a descriptor.

Shading images are H x W x 3 arrays. Bases are K x H x W. The bases for cell k
hold the quadrature average of max(0, n.w) * V(p, w) over the cell, so a
descriptor holding per-cell radiant energy composes to the reflection integral.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .envlight import (BasisPartition, EnvMap, IlluminationDescriptor, envmap_directions,
                       sample_directions)
from .geometry import Camera, DepthMap, NormalMap, camera_digest, unproject
from .imageio import read_pfm, write_pfm


@dataclass(frozen=True)
class ShadowConfig:
    """Ray-march settings. None means derive from the geometry (see `resolve`)."""

    samples_per_cell: int = 8
    ray_step: float | None = None
    max_ray_distance: float | None = None
    shadow_bias: float | None = None
    ground_plane: tuple | None = None  # (a, b, c, d) in camera space, normal pointing up
    shadows: bool = True

    def __post_init__(self):
        if self.samples_per_cell < 1:
            raise ValueError("samples_per_cell must be >= 1")
        if self.ray_step is not None and self.ray_step <= 0:
            raise ValueError("ray_step must be positive")

    def resolve(self, points: np.ndarray, valid: np.ndarray) -> "ShadowConfig":
        step = self.ray_step
        if step is None:
            both = valid[:, 1:] & valid[:, :-1]
            gaps = np.linalg.norm(points[:, 1:] - points[:, :-1], axis=-1)[both]
            step = 0.5 * float(np.median(gaps)) if gaps.size else 1e-2
            step = max(step, 1e-6)
        dist = self.max_ray_distance
        if dist is None:
            p = points[valid]
            dist = float(np.linalg.norm(p.max(axis=0) - p.min(axis=0))) if p.size else 1.0
        bias = self.shadow_bias if self.shadow_bias is not None else 2.0 * step
        return replace(self, ray_step=step, max_ray_distance=max(dist, step), shadow_bias=bias)

    def plane_args(self) -> tuple[np.ndarray, bool]:
        if self.ground_plane is None:
            return np.zeros(4), False
        plane = np.asarray(self.ground_plane, dtype=np.float64)
        return plane / np.linalg.norm(plane[:3]), True

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        if d["ground_plane"] is not None:
            d["ground_plane"] = [float(x) for x in d["ground_plane"]]
        return d


def _prepare(depth: DepthMap, normals: NormalMap, cfg: ShadowConfig, camera: Camera):
    k = camera.intrinsics
    if normals.normals.shape[:2] != depth.shape:
        raise ValueError("depth and normals are not aligned")
    valid = depth.valid_mask & normals.valid_mask
    if not valid.any():
        raise ValueError("no pixel has valid geometry")
    points = unproject(depth, k)
    cfg = cfg.resolve(points, depth.valid_mask)
    plane, use_plane = cfg.plane_args()
    step = cfg.ray_step if cfg.shadows else 1.0
    dist = cfg.max_ray_distance if cfg.shadows else 0.0
    geo = dict(points=np.ascontiguousarray(points), normals=np.ascontiguousarray(normals.normals),
               valid=np.ascontiguousarray(valid), depth=np.ascontiguousarray(depth.values))
    ray = (float(k.fx), float(k.fy), float(k.cx), float(k.cy), float(step),
           float(cfg.shadow_bias), float(dist), plane, use_plane)
    return geo, ray, cfg


def _to_camera(dirs_world: np.ndarray, camera: Camera) -> np.ndarray:
    return np.ascontiguousarray(dirs_world.reshape(-1, 3) @ np.asarray(camera.rotation))


def visibility(depth: DepthMap, normals: NormalMap, pixel: tuple[int, int],
               direction: np.ndarray, cfg: ShadowConfig, camera: Camera) -> int:
    """1 if the world direction is unoccluded from pixel (x, y), else 0."""
    x, y = pixel
    if not (depth.valid_mask[y, x] and normals.valid_mask[y, x]):
        return 0
    geo, ray, _ = _prepare(depth, normals, cfg, camera)
    d = _to_camera(np.asarray(direction, dtype=float), camera)[0]
    p, n = geo["points"][y, x], geo["normals"][y, x]
    return int(_kernels.visible(p[0], p[1], p[2], n[0], n[1], n[2], d[0], d[1], d[2],
                                geo["depth"], geo["valid"], *ray))


def visibility_mask(depth: DepthMap, normals: NormalMap, direction: np.ndarray,
                    cfg: ShadowConfig, camera: Camera) -> np.ndarray:
    """Per-pixel cos * V for one world direction (a single distant light)."""
    geo, ray, _ = _prepare(depth, normals, cfg, camera)
    d = _to_camera(np.asarray(direction, dtype=float), camera)
    out = np.zeros((1, 1) + depth.shape)
    _kernels.accumulate_transfer(geo["points"], geo["normals"], geo["valid"], geo["depth"], d,
                                 np.zeros(1, np.int64), np.ones((1, 1)), out, *ray)
    return out[0, 0]


@dataclass
class ShadingBases:
    SB: np.ndarray  # K x H x W
    partition: BasisPartition
    geometry_id: str = ""

    @property
    def K(self) -> int:
        return self.SB.shape[0]

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {"K": self.K, "H": self.SB.shape[1], "W": self.SB.shape[2],
                "partition": self.partition.to_dict(), "geometry_hash": self.geometry_id}
        (directory / "meta.json").write_text(json.dumps(meta, indent=1))
        for k in range(self.K):
            write_pfm(directory / f"SB_{k}.pfm", self.SB[k])

    @classmethod
    def load(cls, directory) -> "ShadingBases":
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text())
        part = BasisPartition.from_dict(meta["partition"])
        if part.K != int(meta["K"]):
            raise ValueError(f"{directory}/meta.json: K={meta['K']} but partition has {part.K} cells")
        sb = np.stack([read_pfm(directory / f"SB_{k}.pfm") for k in range(part.K)])
        if sb.shape[1:] != (int(meta["H"]), int(meta["W"])):
            raise ValueError(f"{directory}: basis images do not match H x W in meta.json")
        return cls(sb, part, meta.get("geometry_hash", ""))


def shading_bases(depth: DepthMap, normals: NormalMap, part: BasisPartition,
                  cfg: ShadowConfig, camera: Camera) -> ShadingBases:
    geo, ray, cfg = _prepare(depth, normals, cfg, camera)
    M = cfg.samples_per_cell
    dirs = _to_camera(sample_directions(part, M), camera)
    group = np.repeat(np.arange(part.K), M).astype(np.int64)
    weight = np.full((part.K * M, 1), 1.0 / M)
    out = np.zeros((part.K, 1) + depth.shape)
    _kernels.accumulate_transfer(geo["points"], geo["normals"], geo["valid"], geo["depth"],
                                 dirs, group, weight, out, *ray)
    sb = np.clip(out[:, 0], 0.0, 1.0)
    return ShadingBases(sb, part, f"{depth.digest()}-{camera_digest(camera)}")


def compose_shading(bases: ShadingBases, desc: IlluminationDescriptor) -> np.ndarray:
    """S[y, x, c] = sum_k l[c, k] * SB[k, y, x], summed in cell order."""
    if bases.K != desc.K or bases.partition.id != desc.partition.id:
        raise ValueError(f"bases ({bases.partition.id}) and descriptor ({desc.partition.id}) "
                         "use different partitions")
    out = np.zeros(bases.SB.shape[1:] + (3,))
    for k in range(bases.K):
        out += bases.SB[k][..., None] * desc.l[:, k]
    return out


def reference_shading(depth: DepthMap, normals: NormalMap, env: EnvMap,
                      cfg: ShadowConfig, camera: Camera) -> np.ndarray:
    """Dense sum over env pixels of radiance * cos * visibility * solid angle."""
    geo, ray, _ = _prepare(depth, normals, cfg, camera)
    dirs, omega = envmap_directions(env.width, env.height)
    weight = (env.radiance * omega[..., None]).reshape(-1, 3)
    keep = np.any(weight > 0, axis=1)
    out = np.zeros((1, 3) + depth.shape)
    if keep.any():
        _kernels.accumulate_transfer(geo["points"], geo["normals"], geo["valid"], geo["depth"],
                                     _to_camera(dirs, camera)[keep], np.zeros(int(keep.sum()), np.int64),
                                     np.ascontiguousarray(weight[keep]), out, *ray)
    return np.moveaxis(out[0], 0, -1)


@dataclass
class TransferMatrix:
    """cos * V from each valid pixel to each pixel-center direction of an env grid."""

    T: np.ndarray  # P x N, float32
    pixel_y: np.ndarray
    pixel_x: np.ndarray
    shape: tuple
    env_size: tuple  # (W', H')

    def shade(self, env: EnvMap) -> np.ndarray:
        if (env.width, env.height) != self.env_size:
            raise ValueError("env map size differs from the transfer grid")
        _, omega = envmap_directions(env.width, env.height)
        w = (env.radiance * omega[..., None]).reshape(-1, 3)
        out = np.zeros(self.shape + (3,))
        out[self.pixel_y, self.pixel_x] = self.T.astype(np.float64) @ w
        return out


def transfer_matrix(depth: DepthMap, normals: NormalMap, env_size: tuple[int, int],
                    cfg: ShadowConfig, camera: Camera) -> TransferMatrix:
    geo, ray, _ = _prepare(depth, normals, cfg, camera)
    dirs, _ = envmap_directions(*env_size)
    py, px = np.nonzero(geo["valid"])
    T = np.zeros((py.size, env_size[0] * env_size[1]))
    _kernels.transfer_rows(geo["points"], geo["normals"], geo["valid"], geo["depth"],
                           py.astype(np.int64), px.astype(np.int64), _to_camera(dirs, camera), T, *ray)
    return TransferMatrix(T.astype(np.float32), py, px, depth.shape, tuple(env_size))
