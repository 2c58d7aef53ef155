import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shadefield.geometry import Camera, DepthMap, Intrinsics, look_rotation
from shadefield.scene import Primitive, SceneSpec, rasterize

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def sphere_on_plane(size=64):
    """Unit sphere resting on the ground, seen from a raised camera, ground included."""
    scene = SceneSpec((Primitive("sphere", (0.0, 0.5, 0.0), (0.5,), (0.7, 0.7, 0.7)),),
                      fov_deg=50.0, cam_position=(-2.5, 1.2, 0.0), cam_pitch_deg=18.0)
    return rasterize(scene, size, size, include_ground=True)


@pytest.fixture(scope="session")
def sphere_scene():
    return sphere_on_plane(64)


def flat_up_plane(size=32, height=1.0):
    """Camera looking straight down at an infinite ground plane."""
    k = Intrinsics.from_fov(60.0, size, size)
    cam = Camera(k, look_rotation(0.0, 90.0), np.array([0.0, height, 0.0]))
    depth = DepthMap(np.full((size, size), height), np.ones((size, size), bool))
    return depth, cam


@pytest.fixture(scope="session")
def forge_split():
    """200 training tuples (5 scenes x 20 skies) and 50 held-out ones from unseen scenes and skies."""
    from shadefield.forge import build_tuples, random_envs, random_scene
    train_envs = random_envs(20, seed=1, prefix="tr")
    test_envs = random_envs(6, seed=2, prefix="te")
    train = build_tuples([random_scene(np.random.default_rng([101, i]), f"tr{i}") for i in range(5)],
                         train_envs, seed=1, split="train")
    test = build_tuples([random_scene(np.random.default_rng([202, i]), f"te{i}") for i in range(5)],
                        test_envs, seed=2, split="test")
    envs = {e.env_id: e.env for e in train_envs + test_envs}
    return train["_tuples"], test["_tuples"][:50], envs


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.REPORT:
        terminalreporter.section("acceptance")
        for line in sorted(mod.REPORT):
            terminalreporter.write_line(line)
