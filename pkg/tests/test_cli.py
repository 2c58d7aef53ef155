import csv
import hashlib
import json

import numpy as np
import pytest

from shadefield.cli import run
from shadefield.envlight import EnvMap, make_partition, procedural_sky
from shadefield.forge import load_manifest, load_tuple, target_descriptor
from shadefield.harmonize import harmonize
from shadefield.imageio import read_image, read_mask, read_pfm, write_pfm
from shadefield.metrics import evaluate_pair
from shadefield.shading import ShadowConfig
from shadefield.skies import random_sky

from conftest import sphere_on_plane

SMALL_FORGE = ["--scenes", "1", "--envs", "2", "--env-size", "32x16", "--out-size", "48x36",
               "--crop-size", "64x48"]


def digest(paths):
    return {str(p): hashlib.sha256(p.read_bytes()).hexdigest() for p in paths}


@pytest.fixture(scope="module")
def scene_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    r = sphere_on_plane(24)
    write_pfm(root / "depth.pfm", np.where(r.depth.valid_mask, r.depth.values, 0.0))
    (root / "camera.json").write_text(json.dumps(r.camera.to_dict()))
    write_pfm(root / "sky.pfm", procedural_sky(random_sky(np.random.default_rng(3), "sunny"), 16, 8).radiance)
    return root


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_forge")
    assert run(["forge", "--out", str(root / "data"), "--seed", "4"] + SMALL_FORGE) == 0
    assert run(["harmonize", "--manifest", str(root / "data" / "manifest.json"), "--oracle",
                "--out-dir", str(root / "pred")]) == 0
    return root


def test_descriptor_smoke(scene_files, tmp_path):
    out = tmp_path / "d.json"
    assert run(["descriptor", "--env", str(scene_files / "sky.pfm"), "--k", "16", "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert np.asarray(d["l"]).shape == (3, 16)


def test_shade_matches_oracle_shade(scene_files, tmp_path):
    geo = ["--depth", str(scene_files / "depth.pfm"), "--camera", str(scene_files / "camera.json")]
    assert run(["bases"] + geo + ["--equirect", "16x8", "--samples", "1", "--out", str(tmp_path / "sb")]) == 0
    assert run(["descriptor", "--env", str(scene_files / "sky.pfm"), "--equirect", "16x8",
                "--out", str(tmp_path / "d.json")]) == 0
    assert run(["shade", "--bases", str(tmp_path / "sb"), "--descriptor", str(tmp_path / "d.json"),
                "--out", str(tmp_path / "s.pfm")]) == 0
    assert run(["oracle-shade"] + geo + ["--env", str(scene_files / "sky.pfm"),
                                         "--out", str(tmp_path / "ref.pfm")]) == 0
    s, ref = read_pfm(tmp_path / "s.pfm"), read_pfm(tmp_path / "ref.pfm")
    assert ref.max() > 0
    assert np.max(np.abs(s - ref)) <= 1e-5 * ref.max()


def test_evaluate_matches_library(dataset):
    manifest_path = dataset / "data" / "manifest.json"
    assert run(["evaluate", "--manifest", str(manifest_path), "--pred-dir", str(dataset / "pred")]) == 0
    manifest = load_manifest(manifest_path)
    with open(dataset / "pred" / "metrics.csv") as f:
        rows = list(csv.DictReader(f))
    assert [r["tuple_id"] for r in rows] == [t["id"] for t in manifest["tuples"]]
    for row, entry in zip(rows, manifest["tuples"]):
        tdir = dataset / "data" / entry["dir"]
        m = evaluate_pair(read_pfm(dataset / "pred" / f"{entry['id']}.pfm"), read_pfm(tdir / "gt.pfm"),
                          read_mask(tdir / "mask.png"))
        for key in ("fmae", "fpsnr", "fssim"):
            assert float(row[key]) == m[key]
    agg = json.loads((dataset / "pred" / "metrics.json").read_text())
    assert agg["count"]["All"] == len(rows)


def test_harmonized_tuple_matches_library(dataset):
    manifest = load_manifest(dataset / "data" / "manifest.json")
    entry = manifest["tuples"][0]
    t = load_tuple(dataset / "data" / entry["dir"])
    env = read_image(dataset / "data" / manifest["envs"][entry["env_id"]]["file"])
    target = target_descriptor(EnvMap(env), entry["rotation_deg"], make_partition(32))
    cfg = ShadowConfig(ground_plane=tuple(t["meta"]["ground_plane"]))
    out = harmonize(t["unharmonized"], t["mask"], t["depth"], t["shading_src"], target, t["camera"], cfg)
    np.testing.assert_allclose(read_pfm(dataset / "pred" / f"{entry['id']}.pfm"), out.astype(np.float32),
                               rtol=1e-6)


def test_exit_codes(scene_files, tmp_path):
    assert run(["descriptor", "--env", str(tmp_path / "missing.pfm"), "--out", str(tmp_path / "d.json")]) == 2
    assert run(["descriptor", "--bogus-flag"]) == 2
    assert run([]) == 2
    assert run(["forge", "--out", str(tmp_path / "f")]) == 2   # no seed
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["shade", "--bases", str(tmp_path), "--descriptor", str(bad), "--out", str(tmp_path / "s.pfm")]) == 2
    # a depth map whose size disagrees with the camera
    write_pfm(tmp_path / "small.pfm", np.ones((8, 8)))
    assert run(["bases", "--depth", str(tmp_path / "small.pfm"), "--camera", str(scene_files / "camera.json"),
                "--out", str(tmp_path / "sb")]) == 2


def test_internal_error_exits_one(monkeypatch, scene_files, tmp_path):
    import shadefield.cli as cli

    def boom(cfg, args):
        raise RuntimeError("boom")
    monkeypatch.setitem(cli.COMMANDS, "descriptor", boom)
    assert run(["descriptor", "--env", str(scene_files / "sky.pfm"), "--out", str(tmp_path / "d.json")]) == 1


def test_print_config(capsys):
    assert run(["--print-config", "harmonize"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["K"] == 32 and cfg["samples_per_cell"] == 8 and cfg["ridge_lambda"] == 1e-2
    assert cfg["fov_deg"] == 60.0


def test_inputs_are_not_mutated(scene_files, dataset, tmp_path):
    inputs = sorted(p for p in scene_files.iterdir() if p.is_file())
    data = sorted(p for p in (dataset / "data").rglob("*") if p.is_file())
    before = digest(inputs + data)
    geo = ["--depth", str(scene_files / "depth.pfm"), "--camera", str(scene_files / "camera.json")]
    assert run(["bases"] + geo + ["--k", "4", "--out", str(tmp_path / "sb")]) == 0
    assert run(["oracle-shade"] + geo + ["--env", str(scene_files / "sky.pfm"), "--out", str(tmp_path / "r.pfm")]) == 0
    manifest = str(dataset / "data" / "manifest.json")
    assert run(["fit-bg", "--manifest", manifest, "--seed", "0", "--k", "8", "--out", str(tmp_path / "e.json")]) == 0
    assert run(["harmonize", "--manifest", manifest, "--estimator", str(tmp_path / "e.json"),
                "--out-dir", str(tmp_path / "pred")]) == 0
    assert run(["evaluate", "--manifest", manifest, "--baseline", "--csv", str(tmp_path / "b.csv"),
                "--json", str(tmp_path / "b.json")]) == 0
    assert digest(inputs + data) == before


def test_single_tuple_mode_matches_manifest_mode(dataset, tmp_path):
    manifest = load_manifest(dataset / "data" / "manifest.json")
    entry = manifest["tuples"][1]
    env_file = dataset / "data" / manifest["envs"][entry["env_id"]]["file"]
    assert run(["descriptor", "--env", str(env_file), "--rotate", str(entry["rotation_deg"]),
                "--out", str(tmp_path / "d.json")]) == 0
    assert run(["harmonize", "--tuple", str(dataset / "data" / entry["dir"]), "--descriptor",
                str(tmp_path / "d.json"), "--out", str(tmp_path / "one")]) == 0
    np.testing.assert_array_equal(read_image(tmp_path / "one.pfm"),
                                  read_image(dataset / "pred" / f"{entry['id']}.pfm"))
