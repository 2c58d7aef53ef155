import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import flat_up_plane, sphere_on_plane
from oracles import SUN_GRID, box_shadow_iou, box_topdown_scene, iou, ray_hits_box, sun, world_points
from shadefield.envlight import (EnvMap, IlluminationDescriptor, SkyParams, descriptor_from_envmap,
                                 envmap_directions, equirect_partition, make_partition, procedural_sky)
from shadefield.geometry import Camera, DepthMap, Intrinsics, NormalMap, normals_from_depth
from shadefield.metrics import fpsnr, to_display
from shadefield.shading import (ShadingBases, ShadowConfig, compose_shading, reference_shading,
                                shading_bases, transfer_matrix, visibility, visibility_mask)

SKY = SkyParams(sun_dir=tuple(sun(40, 120)), sun_radiance=(20.0, 18.0, 15.0), sun_angular_radius=0.15,
                zenith=(0.15, 0.2, 0.35), horizon=(0.3, 0.3, 0.32), ground=(0.05, 0.05, 0.05))
# broad sun: sixteen cells resolve low-frequency light but smear a hard sun's penumbra over a cell
SOFT_SKY = SkyParams(sun_dir=tuple(sun(40, 120)), sun_radiance=(1.5, 1.38, 1.2), sun_angular_radius=0.6,
                     zenith=(0.15, 0.2, 0.35), horizon=(0.3, 0.3, 0.32), ground=(0.05, 0.05, 0.05))


def up_normals(depth):
    # camera looks down: world up is camera -z
    n = np.zeros(depth.shape + (3,))
    n[..., 2] = -1.0
    return NormalMap(n, depth.valid_mask)


# --- visibility ---------------------------------------------------------------------

def test_fronto_parallel_plane_sees_its_hemisphere():
    k = Intrinsics.from_fov(60, 24, 24)
    depth = DepthMap(np.full((24, 24), 2.0), np.ones((24, 24), bool))
    cam = Camera(k)
    normals = normals_from_depth(depth, k)
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = rng.normal(size=3)
        d[2] = -abs(d[2])          # toward the camera side of the plane
        d /= np.linalg.norm(d)
        x, y = rng.integers(2, 22, 2)
        assert visibility(depth, normals, (x, y), d, ShadowConfig(), cam) == 1


def test_box_blocks_ground_point_analytically():
    r, lo, hi = box_topdown_scene(96)
    pts = world_points(r)
    cfg = ShadowConfig(ground_plane=tuple(r.camera.ground_plane_cam()))
    # ground pixel west (-x) of the box... the box lies toward +x from it
    ys, xs = np.nonzero(r.ground)
    p = pts[ys, xs]
    pick = np.argmin(np.abs(p[:, 2]) + np.abs(p[:, 0] + 0.6))
    x, y, origin = xs[pick], ys[pick], p[pick]
    toward_box = np.array([0.0, 0.4, 0.0]) - origin
    toward_box /= np.linalg.norm(toward_box)
    over_top = np.array([0.0, 1.5, 0.0]) - origin
    over_top /= np.linalg.norm(over_top)
    assert ray_hits_box(origin, toward_box, lo, hi)[0]
    assert not ray_hits_box(origin, over_top, lo, hi)[0]
    assert visibility(r.depth, r.normals, (x, y), toward_box, cfg, r.camera) == 0
    assert visibility(r.depth, r.normals, (x, y), over_top, cfg, r.camera) == 1


def test_below_ground_horizon_is_occluded():
    depth, cam = flat_up_plane(16)
    normals = up_normals(depth)
    cfg = ShadowConfig(ground_plane=tuple(cam.ground_plane_cam()))
    for d in (sun(-5, 0), sun(-60, 200), np.array([0, -1.0, 0])):
        assert visibility(depth, normals, (8, 8), d, cfg, cam) == 0
    assert visibility(depth, normals, (8, 8), sun(10, 45), cfg, cam) == 1


def test_invalid_pixel_has_zero_visibility():
    depth, cam = flat_up_plane(8)
    depth = DepthMap(depth.values, depth.valid_mask & (np.arange(8)[None, :] > 0))
    assert visibility(depth, up_normals(depth), (0, 3), sun(80, 0), ShadowConfig(), cam) == 0


@pytest.mark.parametrize("elev", [30.0, 45.0, 60.0])
def test_box_shadow_iou(elev):
    r, lo, hi = box_topdown_scene(128)
    cfg = ShadowConfig(ground_plane=tuple(r.camera.ground_plane_cam()))
    for e, a in SUN_GRID:
        if e != elev:
            continue
        score, area = box_shadow_iou(r, lo, hi, sun(e, a), cfg)
        assert area > 300
        assert score >= 0.95, (e, a, score)


# --- bases --------------------------------------------------------------------------

def test_hemisphere_basis_value():
    depth, cam = flat_up_plane(16)
    sb = shading_bases(depth, up_normals(depth), make_partition(1), ShadowConfig(), cam)
    np.testing.assert_allclose(sb.SB[0], 0.25, rtol=0.02)


def test_cells_below_tangent_plane_are_zero():
    depth, cam = flat_up_plane(16)
    part = make_partition(16)   # bottom two rings lie below the horizon
    sb = shading_bases(depth, up_normals(depth), part, ShadowConfig(), cam)
    below = part.cell_bounds()[0] >= np.pi / 2 - 1e-12
    assert below.sum() == 8
    assert np.all(sb.SB[below] == 0)


def test_bases_range_and_invalid_pixels(sphere_scene):
    r = sphere_scene
    sb = shading_bases(r.depth, r.normals, make_partition(16), ShadowConfig(), r.camera)
    assert sb.SB.min() >= 0 and sb.SB.max() <= 1
    assert np.all(sb.SB[:, ~r.depth.valid_mask] == 0)


def test_bases_are_deterministic(sphere_scene):
    r = sphere_scene
    a = shading_bases(r.depth, r.normals, make_partition(8), ShadowConfig(), r.camera)
    b = shading_bases(r.depth, r.normals, make_partition(8), ShadowConfig(), r.camera)
    np.testing.assert_array_equal(a.SB, b.SB)
    assert a.geometry_id == b.geometry_id


def test_bases_roundtrip(tmp_path, sphere_scene):
    r = sphere_scene
    sb = shading_bases(r.depth, r.normals, make_partition(4), ShadowConfig(), r.camera)
    sb.save(tmp_path / "b")
    meta = json.loads((tmp_path / "b" / "meta.json").read_text())
    assert set(meta) == {"K", "H", "W", "partition", "geometry_hash"}
    assert sorted(p.name for p in (tmp_path / "b").glob("SB_*.pfm")) == [f"SB_{k}.pfm" for k in range(4)]
    back = ShadingBases.load(tmp_path / "b")
    np.testing.assert_allclose(back.SB, sb.SB, rtol=1e-7)
    assert back.partition.id == sb.partition.id


# --- composition --------------------------------------------------------------------

@pytest.fixture(scope="module")
def bases16():
    r = sphere_on_plane(64)
    return r, shading_bases(r.depth, r.normals, make_partition(16), ShadowConfig(), r.camera)


def test_zero_descriptor(bases16):
    _, sb = bases16
    assert np.all(compose_shading(sb, IlluminationDescriptor(np.zeros((3, 16)), sb.partition)) == 0)


@given(st.integers(0, 2**31))
def test_linearity(bases16, seed):
    _, sb = bases16
    rng = np.random.default_rng(seed)
    l1 = IlluminationDescriptor(rng.random((3, 16)), sb.partition)
    l2 = IlluminationDescriptor(rng.random((3, 16)), sb.partition)
    s1, s2 = compose_shading(sb, l1), compose_shading(sb, l2)
    np.testing.assert_array_equal(compose_shading(sb, l1.scaled(2.0)), 2 * s1)
    np.testing.assert_allclose(compose_shading(sb, IlluminationDescriptor(l1.l + l2.l, sb.partition)),
                               s1 + s2, rtol=1e-12, atol=1e-15)
    assert compose_shading(sb, l1).min() >= 0


def test_partition_mismatch_raises(bases16):
    _, sb = bases16
    with pytest.raises(ValueError):
        compose_shading(sb, IlluminationDescriptor(np.ones((3, 16)), make_partition(16).__class__(
            "equirect", 4, make_partition(16).polar_edges)))
    with pytest.raises(ValueError):
        compose_shading(sb, IlluminationDescriptor(np.ones((3, 8)), make_partition(8)))


def test_k16_close_to_dense(bases16):
    r, sb = bases16
    env = procedural_sky(SOFT_SKY, 32, 16)
    ref = reference_shading(r.depth, r.normals, env, ShadowConfig(), r.camera)
    S = compose_shading(sb, descriptor_from_envmap(env, sb.partition))
    m = r.depth.valid_mask
    assert fpsnr(to_display(S), to_display(ref), m) >= 30.0


def test_refinement_reduces_error():
    r = sphere_on_plane(48)
    env = procedural_sky(SKY, 32, 16)
    ref = reference_shading(r.depth, r.normals, env, ShadowConfig(), r.camera)
    m = r.depth.valid_mask
    errs = []
    for K in (4, 16, 64):
        sb = shading_bases(r.depth, r.normals, make_partition(K), ShadowConfig(), r.camera)
        errs.append(np.mean(np.abs(compose_shading(sb, descriptor_from_envmap(env, sb.partition)) - ref)[m]))
    assert errs[0] >= errs[1] >= errs[2]


# --- dense reference ----------------------------------------------------------------

def test_furnace_dense():
    depth, cam = flat_up_plane(8)
    S = reference_shading(depth, up_normals(depth), EnvMap(np.ones((64, 128, 3))), ShadowConfig(), cam)
    np.testing.assert_allclose(S, np.pi, rtol=0.01)


def test_black_env():
    depth, cam = flat_up_plane(8)
    S = reference_shading(depth, up_normals(depth), EnvMap(np.zeros((8, 16, 3))), ShadowConfig(), cam)
    assert np.all(S == 0)


def test_exact_refinement_identity_small():
    r = sphere_on_plane(24)
    env = procedural_sky(SKY, 16, 8)
    cfg = ShadowConfig(samples_per_cell=1)
    ref = reference_shading(r.depth, r.normals, env, cfg, r.camera)
    part = equirect_partition(16, 8)
    S = compose_shading(shading_bases(r.depth, r.normals, part, cfg, r.camera), descriptor_from_envmap(env, part))
    assert np.max(np.abs(S - ref)) <= 1e-5 * np.max(ref)


def test_transfer_matrix_matches_dense():
    r = sphere_on_plane(32)
    env = procedural_sky(SKY, 16, 8)
    cfg = ShadowConfig()
    ref = reference_shading(r.depth, r.normals, env, cfg, r.camera)
    T = transfer_matrix(r.depth, r.normals, (16, 8), cfg, r.camera)
    np.testing.assert_allclose(T.shade(env), ref, rtol=1e-5, atol=1e-6)
    with pytest.raises(ValueError):
        T.shade(EnvMap(np.ones((4, 8, 3))))


def test_no_shadow_mode_ignores_occluders():
    r, lo, hi = box_topdown_scene(64)
    d = sun(30, 180)
    lit = visibility_mask(r.depth, r.normals, d, ShadowConfig(shadows=False), r.camera)
    cos = np.clip(r.normals.normals @ (np.asarray(r.camera.rotation).T @ d), 0, None)
    np.testing.assert_allclose(lit, np.where(r.depth.valid_mask, cos, 0), atol=1e-12)
