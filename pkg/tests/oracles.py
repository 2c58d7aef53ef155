"""Independent analytic references shared by the tests."""
import numpy as np

from shadefield.geometry import DepthMap, NormalMap
from shadefield.scene import Primitive, SceneSpec, rasterize


def ray_hits_box(origins, d, lo, hi):
    """Slab test for rays origins + t d, t > 0, against an axis-aligned box."""
    origins = np.atleast_2d(origins)
    d = np.asarray(d, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (np.asarray(lo) - origins) / d
        t2 = (np.asarray(hi) - origins) / d
    tmin = np.where(d == 0, np.where((origins >= lo) & (origins <= hi), -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(d == 0, np.where((origins >= lo) & (origins <= hi), np.inf, -np.inf), np.maximum(t1, t2))
    near, far = tmin.max(axis=1), tmax.min(axis=1)
    return (far >= np.maximum(near, 0)) & (far > 0)


def box_topdown_scene(size=128):
    """Slender 0.3 x 1.0 x 0.3 box on the ground seen from 40 m with a 3.5 deg lens.

    A depth map treats everything behind the visible surface as solid. With a
    near-orthographic view that solid is the box itself rather than a frustum
    flaring out from its top face, and the long shadow spans many pixels.
    """
    box = Primitive("box", (0.0, 0.5, 0.0), (0.3, 1.0, 0.3), (0.6, 0.6, 0.6))
    scene = SceneSpec((box,), fov_deg=3.5, cam_position=(0.0, 40.0, 0.0), cam_pitch_deg=90.0)
    r = rasterize(scene, size, size, include_ground=True)
    lo = np.array([-0.15, 0.0, -0.15])
    hi = np.array([0.15, 1.0, 0.15])
    return r, lo, hi


def world_points(r):
    """World positions of every valid raster pixel."""
    k = r.camera.intrinsics
    v, u = np.mgrid[0:k.height, 0:k.width].astype(float)
    z = r.depth.values
    cam = np.stack([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z], -1)
    return cam @ np.asarray(r.camera.rotation).T + r.camera.position


def sun(elev_deg, azim_deg):
    e, a = np.radians(elev_deg), np.radians(azim_deg)
    return np.array([np.cos(e) * np.cos(a), np.sin(e), np.cos(e) * np.sin(a)])


def iou(a, b):
    return (a & b).sum() / max((a | b).sum(), 1)


# three elevations by eight azimuths, offset so no light runs along a pixel axis
SUN_GRID = [(e, a + 10.0) for e in (30.0, 45.0, 60.0) for a in range(0, 360, 45)]


def box_shadow_iou(r, lo, hi, d, cfg):
    """IoU of the ray-marched ground shadow against the exact one, plus the exact pixel count."""
    from shadefield.shading import visibility_mask
    lit = visibility_mask(r.depth, r.normals, d, cfg, r.camera) > 0
    g = r.ground
    analytic = np.zeros_like(g)
    analytic[g] = ray_hits_box(world_points(r)[g], d, lo, hi)
    return iou(~lit & g, analytic), int(analytic.sum())
