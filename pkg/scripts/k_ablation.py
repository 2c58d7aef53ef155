#!/usr/bin/env python3
"""Shading accuracy against the dense reference as the number of bases K grows.

Renders a few random forge scenes under random skies, builds nested band
partitions and prints the mean foreground fPSNR of compose_shading vs the
per-pixel env-map integral.

    python scripts/k_ablation.py --scenes 5 --skies 5 --ks 4 16 64
"""
import argparse
import time

import numpy as np

from shadefield.envlight import descriptor_from_envmap, make_partition, procedural_sky
from shadefield.forge import random_scene
from shadefield.metrics import fpsnr, to_display
from shadefield.scene import rasterize
from shadefield.shading import ShadowConfig, compose_shading, reference_shading, shading_bases
from shadefield.skies import random_sky


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=5)
    ap.add_argument("--skies", type=int, default=5)
    ap.add_argument("--ks", type=int, nargs="+", default=[4, 16, 64])
    ap.add_argument("--size", type=int, nargs=2, default=[64, 48], metavar=("W", "H"))
    ap.add_argument("--samples", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    t0 = time.perf_counter()
    scenes = [rasterize(random_scene(np.random.default_rng([args.seed, 303, i])), *args.size, include_ground=True)
              for i in range(args.scenes)]
    skies = [procedural_sky(random_sky(np.random.default_rng([args.seed, 404, j])), 32, 16)
             for j in range(args.skies)]
    refs = []
    for r in scenes:
        cfg = ShadowConfig(samples_per_cell=args.samples, ground_plane=tuple(r.camera.ground_plane_cam()))
        refs.append([reference_shading(r.depth, r.normals, env, cfg, r.camera) for env in skies])

    print(f"{'K':>4} {'fPSNR':>8} {'min':>7} {'max':>7}")
    for K in args.ks:
        scores = []
        for r, row in zip(scenes, refs):
            cfg = ShadowConfig(samples_per_cell=args.samples, ground_plane=tuple(r.camera.ground_plane_cam()))
            sb = shading_bases(r.depth, r.normals, make_partition(K), cfg, r.camera)
            for env, ref in zip(skies, row):
                S = compose_shading(sb, descriptor_from_envmap(env, sb.partition))
                scores.append(fpsnr(to_display(S), to_display(ref), r.depth.valid_mask))
        print(f"{K:>4} {np.mean(scores):8.2f} {np.min(scores):7.2f} {np.max(scores):7.2f}")
    print(f"({time.perf_counter() - t0:.0f} s)")


if __name__ == "__main__":
    main()
