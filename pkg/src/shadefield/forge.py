"""Synthetic harmonization tuples: render objects under procedural skies, crop
backgrounds with a virtual camera, place objects on annotated ground, and
pair each harmonized ground truth with an unharmonized twin lit by another sky.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from matplotlib.path import Path as PolyPath
from scipy.ndimage import map_coordinates

from .envlight import (BasisPartition, EnvMap, IlluminationDescriptor, SkyParams, descriptor_from_envmap,
                       direction_angles, procedural_sky, rotate_envmap)
from .geometry import Camera, DepthMap, Intrinsics, NormalMap, look_rotation, pixel_grid
from .harmonize import composite
from ._kernels import JUMP_FOOTPRINTS
from .imageio import write_mask, write_pfm, write_png
from .scene import Primitive, Raster, SceneSpec, rasterize
from .shading import ShadowConfig, TransferMatrix, reference_shading, transfer_matrix
from .skies import random_sky

log = logging.getLogger(__name__)

ANGLES = tuple(range(0, 360, 45))
DEFAULT_OUT_SIZE = (640, 480)   # width, height
SCALE_RANGE = (0.3, 0.8)
MIN_OBJECT_PX = 8


# --- rendering ---------------------------------------------------------------------

class ObjectRenderer:
    """Rasterizes a scene once and shades it under any env via its transfer matrix."""

    def __init__(self, scene: SceneSpec, out_size=DEFAULT_OUT_SIZE, cfg: ShadowConfig | None = None):
        self.scene = scene
        self.raster: Raster = rasterize(scene, *out_size)
        if not self.raster.mask.any():
            raise ValueError(f"scene {scene.name!r} is not visible from its camera")
        cam = self.raster.camera
        self.cfg = cfg or ShadowConfig(ground_plane=tuple(cam.ground_plane_cam()))
        self._transfer: dict[tuple, TransferMatrix] = {}

    def transfer(self, env_size) -> TransferMatrix:
        if env_size not in self._transfer:
            r = self.raster
            self._transfer[env_size] = transfer_matrix(r.depth, r.normals, env_size, self.cfg, r.camera)
        return self._transfer[env_size]

    def render(self, env: EnvMap, rotation_deg: float = 0.0) -> dict:
        if rotation_deg % 45:
            raise ValueError(f"rotation must be a multiple of 45 degrees, got {rotation_deg}")
        env = rotate_envmap(env, rotation_deg)
        shading = self.transfer((env.width, env.height)).shade(env)
        r = self.raster
        return {"image": r.albedo * shading, "shading": shading, "albedo": r.albedo.copy(),
                "depth": r.depth, "mask": r.mask.copy(), "camera": r.camera}


def render_object(scene: SceneSpec, env: EnvMap, rotation_deg: float = 0.0,
                  out_size=DEFAULT_OUT_SIZE, cfg: ShadowConfig | None = None,
                  dense: bool = False) -> dict:
    """Per-object image, shading, albedo, depth and mask under the rotated env.

    `dense` evaluates the reference sum directly instead of through the
    transfer matrix (same sum, different accumulation order).
    """
    renderer = ObjectRenderer(scene, out_size, cfg)
    if not dense:
        return renderer.render(env, rotation_deg)
    r = renderer.raster
    shading = reference_shading(r.depth, r.normals, rotate_envmap(env, rotation_deg), renderer.cfg, r.camera)
    return {"image": r.albedo * shading, "shading": shading, "albedo": r.albedo.copy(),
            "depth": r.depth, "mask": r.mask.copy(), "camera": r.camera}


# --- background crops ----------------------------------------------------------------

def crop_camera(yaw_deg: float, fov_deg: float, out_size) -> Camera:
    return Camera(Intrinsics.from_fov(fov_deg, *out_size), look_rotation(yaw_deg, 0.0))


def crop_directions(yaw_deg: float, fov_deg: float, out_size) -> np.ndarray:
    cam = crop_camera(yaw_deg, fov_deg, out_size)
    k = cam.intrinsics
    u, v = pixel_grid(k.height, k.width)
    d = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1) @ cam.rotation.T
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def sample_envmap(env: EnvMap, dirs: np.ndarray) -> np.ndarray:
    """Bilinear lookup, wrapping in azimuth and clamping at the poles."""
    theta, phi = direction_angles(dirs)
    x = phi / (2 * np.pi) * env.width - 0.5
    y = theta / np.pi * env.height - 0.5
    padded = np.concatenate([env.radiance[:, -1:], env.radiance, env.radiance[:, :1]], axis=1)
    coords = [np.clip(y, 0, env.height - 1), np.mod(x + 0.5, env.width) + 0.5]
    return np.stack([map_coordinates(padded[..., c], coords, order=1, mode="nearest")
                     for c in range(3)], axis=-1)


def crop_background(env: EnvMap, yaw_deg: float, fov_deg: float = 60.0, out_size=(128, 96)) -> np.ndarray:
    """Pinhole view of the env map at the given yaw and zero pitch."""
    if not 0 < fov_deg < 180:
        raise ValueError(f"fov must be in (0, 180), got {fov_deg}")
    return sample_envmap(env, crop_directions(yaw_deg, fov_deg, out_size))


# --- planar annotations -----------------------------------------------------------

HORIZON_BAND = [[0.0, 0.52], [1.0, 0.52], [1.0, 0.72], [0.0, 0.72]]


@dataclass
class PlanarAnnotation:
    """Ground polygons in normalized equirect coordinates (u, v in [0, 1])."""

    polygons: list

    @classmethod
    def horizon_band(cls) -> "PlanarAnnotation":
        return cls([HORIZON_BAND])

    def crop_mask(self, yaw_deg: float, fov_deg: float, out_size) -> np.ndarray:
        theta, phi = direction_angles(crop_directions(yaw_deg, fov_deg, out_size))
        uv = np.stack([phi / (2 * np.pi), theta / np.pi], axis=-1).reshape(-1, 2)
        inside = np.zeros(len(uv), bool)
        for poly in self.polygons:
            inside |= PolyPath(np.asarray(poly, float)).contains_points(uv)
        return inside.reshape(out_size[1], out_size[0])


def load_annotations(path) -> dict[str, PlanarAnnotation]:
    with open(path) as f:
        data = json.load(f)
    return {env_id: PlanarAnnotation(polys) for env_id, polys in data.items()}


# --- placement --------------------------------------------------------------------

def _resize(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with pixel-center alignment; identity when sizes match."""
    h, w = a.shape[:2]
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    if a.ndim == 2:
        return map_coordinates(a, [yy, xx], order=1, mode="nearest")
    return np.stack([map_coordinates(a[..., c], [yy, xx], order=1, mode="nearest")
                     for c in range(a.shape[2])], axis=-1)


def _resize_depth(z: np.ndarray, valid: np.ndarray, out_h: int, out_w: int, jump: float):
    """Resize a depth map without inventing surfaces between occluding layers.

    Each sample blends its valid source neighbors bilinearly when they lie
    within `jump` * nearest depth of each other, and otherwise copies the
    valid neighbor with the largest bilinear weight.
    """
    h, w = z.shape
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    yy, xx = np.meshgrid(np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1), indexing="ij")
    y0 = np.minimum(np.floor(yy).astype(int), max(h - 2, 0))
    x0 = np.minimum(np.floor(xx).astype(int), max(w - 2, 0))
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    a, b = xx - x0, yy - y0
    corners = [(y0, x0), (y0, x1), (y1, x0), (y1, x1)]
    zs = np.stack([z[c] for c in corners])
    ws = np.stack([(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b]) * np.stack([valid[c] for c in corners])
    ok = ws.sum(axis=0) > 1e-6
    live = ws > 0
    lo = np.where(live, zs, np.inf).min(axis=0)
    hi = np.where(live, zs, -np.inf).max(axis=0)
    smooth = hi - lo <= jump * lo
    blend = (ws * zs).sum(axis=0) / np.where(ok, ws.sum(axis=0), 1.0)
    nearest = np.take_along_axis(zs, ws.argmax(axis=0)[None], axis=0)[0]
    return np.where(ok, np.where(smooth, blend, nearest), 0.0), ok


def place_object(fg: dict, bg: np.ndarray, ann_mask: np.ndarray, rng_seed, scale: float | None = None,
                 target: tuple[int, int] | None = None, scale_range=SCALE_RANGE) -> dict:
    """Tight-crop the foreground, resize it, and paste it so its bottom-left
    corner lands on a pixel drawn from the annotated ground.

    `fg` holds 'image' and 'mask' and optionally 'albedo', 'shading', 'depth'
    (a DepthMap) and 'camera'; every raster is placed identically. `scale`
    fixes the resize factor; otherwise it is drawn so the object height is a
    uniform fraction in `scale_range` of the background height.
    """
    ann_mask = np.asarray(ann_mask, bool)
    if not ann_mask.any():
        raise ValueError("annotation has no ground pixels in this crop")
    rng = np.random.default_rng(rng_seed)
    mask = np.asarray(fg["mask"], bool)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise ValueError("foreground mask is empty")
    r0, r1, c0, c1 = rows.min(), rows.max() + 1, cols.min(), cols.max() + 1
    fh, fw = r1 - r0, c1 - c0
    bh, bw = bg.shape[:2]
    if target is None:
        ty, tx = np.argwhere(ann_mask)[rng.integers(int(ann_mask.sum()))]
    else:
        ty, tx = target
    if scale is None:
        scale = float(rng.uniform(*scale_range)) * bh / fh
    oh, ow = max(int(round(fh * scale)), 1), max(int(round(fw * scale)), 1)
    if min(oh, ow) < MIN_OBJECT_PX:
        raise ValueError(f"placed object would be {ow}x{oh} px, below {MIN_OBJECT_PX} px")
    top, left = int(ty) - oh + 1, int(tx)

    def paste(a, fill, resized=False):
        if not resized:
            a = _resize(a[r0:r1, c0:c1], oh, ow) if (oh, ow) != (fh, fw) else a[r0:r1, c0:c1]
        out = np.full((bh, bw) + a.shape[2:], fill, dtype=np.float64)
        ys, xs = max(top, 0), max(left, 0)
        ye, xe = min(top + oh, bh), min(left + ow, bw)
        if ye > ys and xe > xs:
            out[ys:ye, xs:xe] = a[ys - top:ye - top, xs - left:xe - left]
        return out

    coverage = paste(mask.astype(np.float64), 0.0)
    placed_mask = coverage >= 0.5
    if placed_mask.sum() < MIN_OBJECT_PX:
        raise ValueError("placed object is clipped away by the image border")
    cov = np.where(placed_mask, coverage, 1.0)[..., None]

    def paste_masked(a):
        # average over object pixels only, so silhouettes do not fade toward the fill value
        return np.where(placed_mask[..., None], paste(a * mask[..., None], 0.0) / cov, 0.0)

    image = paste_masked(fg["image"])
    out = {"composite": composite(image, bg, placed_mask), "mask": placed_mask, "image": image}
    for key in ("albedo", "shading"):
        if key in fg:
            out[key] = paste_masked(fg[key])
    if "depth" in fg:
        d = fg["depth"]
        z, ok = d.values[r0:r1, c0:c1], d.valid_mask[r0:r1, c0:c1]
        if (oh, ow) != (fh, fw):
            k = fg["camera"].intrinsics if "camera" in fg else None
            jump = JUMP_FOOTPRINTS / min(k.fx, k.fy) if k else 0.05
            z, ok = _resize_depth(z, ok, oh, ow, jump)
        ok = placed_mask & (paste(ok.astype(np.float64), 0.0, resized=True) > 0.5)
        out["depth"] = DepthMap(np.where(ok, paste(z, 0.0, resized=True), 0.0), ok)
    sy, sx = oh / fh, ow / fw
    if "camera" in fg:
        cam = fg["camera"]
        k = cam.intrinsics
        # resizing a pinhole image is a pinhole camera with scaled focal length
        eff = Intrinsics(k.fx * sx, k.fy * sy, left - 0.5 + sx * (k.cx - c0 + 0.5),
                         top - 0.5 + sy * (k.cy - r0 + 0.5), bw, bh)
        out["camera"] = Camera(eff, cam.rotation, cam.position)
    out["record"] = {"pixel": [int(ty), int(tx)], "scale": float(scale), "corner": "bottom-left",
                     "crop_box": [int(r0), int(c0), int(fh), int(fw)], "size": [int(oh), int(ow)]}
    return out


# --- scenes and skies --------------------------------------------------------------

def random_scene(rng: np.random.Generator, name: str = "scene") -> SceneSpec:
    """One to three primitives resting on the ground in front of the camera."""
    prims = []
    for _ in range(int(rng.integers(1, 4))):
        shape = ["sphere", "box", "capsule"][int(rng.integers(3))]
        x, z = rng.uniform(-0.5, 0.5), rng.uniform(-0.6, 0.6)
        color = tuple(map(float, rng.uniform(0.15, 0.85, 3)))
        checker = None
        if rng.random() < 0.3:
            checker = (tuple(map(float, rng.uniform(0.15, 0.85, 3))), float(rng.uniform(0.15, 0.3)))
        if shape == "sphere":
            r = rng.uniform(0.3, 0.5)
            prims.append(Primitive("sphere", (x, r, z), (r,), color, checker))
        elif shape == "box":
            sx, sy, sz = rng.uniform(0.35, 0.7), rng.uniform(0.4, 1.1), rng.uniform(0.35, 0.7)
            prims.append(Primitive("box", (x, sy / 2, z), (sx, sy, sz), color, checker,
                                   float(rng.uniform(0, 90))))
        else:
            r, h = rng.uniform(0.18, 0.3), rng.uniform(0.3, 0.8)
            prims.append(Primitive("capsule", (x, h / 2 + r, z), (r, h), color, checker))
    return SceneSpec(tuple(prims), fov_deg=40.0, cam_position=(-3.2, 1.4, 0.0),
                     cam_pitch_deg=18.0, name=name)


@dataclass
class EnvEntry:
    env_id: str
    env: EnvMap
    condition: str = "unknown"
    params: SkyParams | None = None


def random_envs(n: int, seed: int, size=(64, 32), prefix: str = "env") -> list[EnvEntry]:
    out = []
    for i in range(n):
        params = random_sky(np.random.default_rng([seed, 7, i]))
        out.append(EnvEntry(f"{prefix}{i:03d}", procedural_sky(params, *size), params.condition, params))
    return out


# --- tuples ----------------------------------------------------------------------

@dataclass
class ForgeConfig:
    out_size: tuple = (128, 96)      # object render size (width, height)
    crop_size: tuple = (160, 120)    # background crop size (width, height)
    fov_deg: float = 60.0
    angles_per_pair: int = 4
    max_placement_tries: int = 20


def _choice(rng, seq, size):
    return [seq[i] for i in sorted(rng.choice(len(seq), size=size, replace=False))]


def build_tuples(scenes: list[SceneSpec], envs: list[EnvEntry], seed: int, root=None,
                 cfg: ForgeConfig = ForgeConfig(), split: str = "train",
                 annotations: dict | None = None) -> dict:
    """Build the tuple manifest; write tuple files under `root` when given.

    Per scene, half of the envs are drawn without replacement; per (scene, env)
    pair, `angles_per_pair` distinct angles are drawn from the eight multiples
    of 45 degrees. The unharmonized twin uses another env drawn uniformly from
    the rest, rendered at the same angle and pasted at the same placement.
    """
    if len(envs) < 2:
        raise ValueError("at least two environment maps are required")
    annotations = annotations or {}
    root = Path(root) if root is not None else None
    tuples, records = [], []
    for si, scene in enumerate(scenes):
        renderer = ObjectRenderer(scene, cfg.out_size)
        rng = np.random.default_rng([seed, si])
        picked = sorted(rng.choice(len(envs), size=len(envs) // 2, replace=False))
        for ei in picked:
            entry = envs[ei]
            angles = _choice(rng, ANGLES, cfg.angles_per_pair)
            for angle in angles:
                others = [j for j in range(len(envs)) if j != ei]
                src = envs[others[int(rng.integers(len(others)))]]
                tid = f"{split}-{si:03d}-{entry.env_id}-{angle:03d}"
                item = _make_tuple(renderer, entry, src, angle, cfg, annotations, [seed, si, int(ei), angle])
                if item is None:
                    log.info("discarding %s: no usable ground placement", tid)
                    continue
                item["meta"].update({"id": tid, "scene": scene.name, "split": split})
                tuples.append(item)
                records.append(item["meta"])
                if root is not None:
                    write_tuple(root / "tuples" / tid, item)
    manifest = {"seed": seed, "split": split, "config": cfg.__dict__,
                "scenes": [s.to_dict() for s in scenes],
                "envs": {e.env_id: {"condition": e.condition,
                                    "params": e.params.to_dict() if e.params else None,
                                    "file": f"envs/{e.env_id}.pfm"} for e in envs},
                "tuples": [{"id": m["id"], "dir": f"tuples/{m['id']}", "env_id": m["env_id"],
                            "env_src_id": m["env_src_id"], "rotation_deg": m["rotation_deg"],
                            "condition": m["condition"], "split": split} for m in records]}
    if root is not None:
        (root / "envs").mkdir(parents=True, exist_ok=True)
        for e in envs:
            write_pfm(root / "envs" / f"{e.env_id}.pfm", e.env.radiance)
        (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    manifest["_tuples"] = tuples
    return manifest


def _make_tuple(renderer: ObjectRenderer, entry: EnvEntry, src: EnvEntry, angle: int,
                cfg: ForgeConfig, annotations: dict, seed) -> dict | None:
    ann = annotations.get(entry.env_id, PlanarAnnotation.horizon_band())
    ann_mask = ann.crop_mask(angle, cfg.fov_deg, cfg.crop_size)
    if not ann_mask.any():
        return None
    bg = crop_background(rotate_envmap(entry.env, angle), 0.0, cfg.fov_deg, cfg.crop_size)
    gt = renderer.render(entry.env, angle)
    unh = renderer.render(src.env, angle)
    rng = np.random.default_rng(seed)
    placed = None
    for _ in range(cfg.max_placement_tries):
        sub = int(rng.integers(2 ** 31))
        try:
            placed = place_object(gt, bg, ann_mask, sub)
            break
        except ValueError:
            continue
    if placed is None:
        return None
    twin = place_object({"image": unh["image"], "mask": unh["mask"], "shading": unh["shading"]}, bg,
                        ann_mask, sub)
    cam = placed["camera"]
    meta = {"env_id": entry.env_id, "env_src_id": src.env_id, "rotation_deg": angle,
            "condition": entry.condition, "placement": placed["record"], "camera": cam.to_dict(),
            "ground_plane": cam.ground_plane_cam().tolist(), "fov_deg": cfg.fov_deg}
    return {"unharmonized": twin["composite"], "harmonized_gt": placed["composite"],
            "mask": placed["mask"], "depth": placed["depth"], "albedo": placed["albedo"],
            "shading_gt": placed["shading"], "shading_src": twin["shading"], "background": bg,
            "camera": cam, "meta": meta}


def target_descriptor(env: EnvMap, rotation_deg: float, partition: BasisPartition) -> IlluminationDescriptor:
    """Descriptor of the light a tuple's ground truth was rendered under."""
    return descriptor_from_envmap(rotate_envmap(env, rotation_deg), partition)


def write_tuple(directory: Path, item: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    write_png(directory / "composite.png", item["unharmonized"])
    write_png(directory / "gt.png", item["harmonized_gt"])
    write_png(directory / "background.png", item["background"])
    write_mask(directory / "mask.png", item["mask"])
    write_pfm(directory / "composite.pfm", item["unharmonized"])
    write_pfm(directory / "gt.pfm", item["harmonized_gt"])
    write_pfm(directory / "background.pfm", item["background"])
    write_pfm(directory / "depth.pfm", np.where(item["depth"].valid_mask, item["depth"].values, 0.0))
    write_pfm(directory / "albedo.pfm", item["albedo"])
    write_pfm(directory / "shading.pfm", item["shading_gt"])
    write_pfm(directory / "shading_src.pfm", item["shading_src"])
    (directory / "meta.json").write_text(json.dumps(item["meta"], indent=1))


def load_tuple(directory) -> dict:
    """Read a tuple directory written by `write_tuple` (linear PFMs preferred)."""
    from .imageio import read_mask, read_pfm
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    depth = read_pfm(directory / "depth.pfm")
    out = {"meta": meta, "mask": read_mask(directory / "mask.png"),
           "depth": DepthMap.from_array(depth), "camera": Camera.from_dict(meta["camera"])}
    for key, name in (("unharmonized", "composite"), ("harmonized_gt", "gt"), ("albedo", "albedo"),
                      ("shading_gt", "shading"), ("shading_src", "shading_src"),
                      ("background", "background")):
        path = directory / f"{name}.pfm"
        if path.exists():
            out[key] = read_pfm(path)
    return out


def load_manifest(path) -> dict:
    path = Path(path)
    manifest = json.loads(path.read_text())
    manifest["_root"] = str(path.parent)
    return manifest
