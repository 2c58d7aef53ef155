import numpy as np
import pytest
from hypothesis import given, strategies as st

from shadefield.envlight import IlluminationDescriptor, make_partition
from shadefield.forge import target_descriptor
from shadefield.harmonize import albedo_from_image, composite, harmonize, render_image
from shadefield.metrics import fmae, fpsnr, to_display
from shadefield.shading import ShadowConfig


def test_albedo_examples():
    rng = np.random.default_rng(0)
    S = rng.random((8, 9, 3)) + 0.01
    np.testing.assert_allclose(albedo_from_image(S, S), 1.0)
    np.testing.assert_allclose(albedo_from_image(0.5 * S, S), 0.5)
    assert albedo_from_image(5 * S, S).max() == 1.0


@given(st.integers(0, 2**31))
def test_render_inverts_albedo_where_defined(seed):
    rng = np.random.default_rng(seed)
    S = rng.random((10, 10, 3)) * 2
    I = S * rng.random((10, 10, 3))
    ok = S >= 1e-3
    A = albedo_from_image(I, S, fill_shadows=False)
    np.testing.assert_allclose(render_image(A, S)[ok], I[ok], rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(render_image(np.ones_like(S), S), S)


def test_shadow_floor_takes_nearest_lit_albedo():
    I = np.full((1, 5, 3), 0.3)
    S = np.ones((1, 5, 3))
    S[0, 3:] = 0.0
    I[0, 3:] = 0.0
    I[0, 2] = 0.6
    A = albedo_from_image(I, S)
    np.testing.assert_allclose(A[0, 3:], 0.6)
    with pytest.raises(ValueError):
        albedo_from_image(I, S, eps=0.0)


def test_composite_selects_pixels():
    rng = np.random.default_rng(1)
    fg, bg = rng.random((6, 8, 3)), rng.random((6, 8, 3))
    np.testing.assert_array_equal(composite(fg, bg, np.ones((6, 8), bool)), fg)
    np.testing.assert_array_equal(composite(fg, bg, np.zeros((6, 8))), bg)
    checker = (np.add.outer(np.arange(6), np.arange(8)) % 2).astype(bool)
    out = composite(fg, bg, checker)
    np.testing.assert_array_equal(out[checker], fg[checker])
    np.testing.assert_array_equal(out[~checker], bg[~checker])


# --- on forge tuples ---------------------------------------------------------------

@pytest.fixture(scope="module")
def case(forge_split):
    train, _, envs = forge_split
    t = train[7]
    part = make_partition(32)
    src = target_descriptor(envs[t["meta"]["env_src_id"]], t["meta"]["rotation_deg"], part)
    tgt = target_descriptor(envs[t["meta"]["env_id"]], t["meta"]["rotation_deg"], part)
    cfg = ShadowConfig(ground_plane=tuple(t["meta"]["ground_plane"]))
    return t, src, tgt, cfg


def run(t, target, cfg, **kw):
    return harmonize(t["unharmonized"], t["mask"], t["depth"], t["shading_src"], target, t["camera"], cfg, **kw)


def test_background_is_untouched(case):
    t, _, tgt, cfg = case
    out = run(t, tgt, cfg)
    np.testing.assert_array_equal(out[~t["mask"]], t["unharmonized"][~t["mask"]])


def test_zero_target_blacks_out_foreground(case):
    t, _, tgt, cfg = case
    out = run(t, IlluminationDescriptor(np.zeros_like(tgt.l), tgt.partition), cfg)
    assert np.all(out[t["mask"]] == 0)
    np.testing.assert_array_equal(out[~t["mask"]], t["unharmonized"][~t["mask"]])


@pytest.mark.parametrize("s", [0.25, 3.0])
def test_exposure_equivariance(case, s):
    t, _, tgt, cfg = case
    a = run(t, tgt, cfg)
    b = run(t, tgt.scaled(s), cfg)
    np.testing.assert_allclose(b[t["mask"]], s * a[t["mask"]], rtol=1e-12, atol=1e-15)


def test_second_pass_is_a_fixed_point(case):
    t, _, tgt, cfg = case
    once, parts = run(t, tgt, cfg, return_parts=True)
    twice = harmonize(once, t["mask"], t["depth"], parts["shading"], tgt, t["camera"], cfg)
    assert fmae(twice, once, t["mask"]) < 1e-4


def test_identity_target_reproduces_foreground(case):
    t, src, _, cfg = case
    out = run(t, src, cfg)
    score = fpsnr(to_display(out), to_display(t["unharmonized"]), t["mask"])
    assert score >= 35.0


def test_true_target_improves_on_composite(case):
    t, _, tgt, cfg = case
    out = run(t, tgt, cfg)
    m, gt = t["mask"], to_display(t["harmonized_gt"])
    assert fmae(to_display(out), gt, m) < fmae(to_display(t["unharmonized"]), gt, m)


def test_errors(case):
    t, _, tgt, cfg = case
    with pytest.raises(ValueError):
        run(t, tgt, cfg, K=16)
    with pytest.raises(ValueError):
        harmonize(t["unharmonized"], np.zeros_like(t["mask"]), t["depth"], t["shading_src"], tgt,
                  t["camera"], cfg)


def test_dataset_albedo_is_recoverable(forge_split):
    train, _, _ = forge_split
    for t in train[::20]:
        m = t["mask"]
        lit = m & (t["shading_gt"].min(axis=2) >= 1e-2)   # away from shadow floors
        gt_img = t["harmonized_gt"]
        A = albedo_from_image(gt_img, t["shading_gt"], mask=m)
        assert fmae(A, t["albedo"], lit) < 0.02


def test_dataset_renders_consistently(forge_split):
    train, _, _ = forge_split
    for t in train[::20]:
        m = t["mask"]
        rendered = render_image(t["albedo"], t["shading_gt"])
        assert fpsnr(to_display(rendered), to_display(t["harmonized_gt"]), m) >= 35.0
