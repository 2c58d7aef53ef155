"""Command-line entry point: `shadefield <subcommand> ...`.

Exit codes: 0 success, 2 bad input (flags, files, shapes), 1 internal error.
Logs go to stderr; results only to the files named on the command line.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bg_estimate, forge
from .config import RunConfig
from .envlight import (EnvMap, IlluminationDescriptor, descriptor_from_envmap, equirect_partition,
                       make_partition, rotate_envmap)
from .geometry import Camera, DepthMap, Intrinsics, normals_from_depth
from .harmonize import harmonize
from .imageio import read_image, read_mask, read_pfm, write_png, write_pfm
from .metrics import evaluate_pair
from .shading import ShadingBases, compose_shading, reference_shading, shading_bases

log = logging.getLogger("shadefield")


class InputError(Exception):
    """Bad user input; reported with the offending file or flag."""


# --- argument parsing ---------------------------------------------------------------

def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return w, h


def _plane(text: str) -> tuple:
    vals = [float(x) for x in text.split(",")]
    if len(vals) != 4:
        raise argparse.ArgumentTypeError(f"ground plane needs a,b,c,d, got {text!r}")
    return tuple(vals)


def _partition_flags(p):
    p.add_argument("--k", type=int, default=32, help="number of band cells (default 32)")
    p.add_argument("--equirect", type=_size, metavar="WxH",
                   help="one cell per pixel of a WxH env map instead of --k bands")


def _geometry_flags(p):
    p.add_argument("--depth", required=True, help="single-channel depth PFM (<= 0 means invalid)")
    p.add_argument("--camera", help="camera JSON (fx, fy, cx, cy, width, height, rotation, position)")
    p.add_argument("--fov", type=float, default=60.0, help="horizontal fov when no camera JSON is given")
    p.add_argument("--mask", help="optional PNG mask restricting the valid depth")
    p.add_argument("--window-radius", type=int, default=2)
    p.add_argument("--samples", type=int, default=8, help="direction samples per cell")
    p.add_argument("--ray-step", type=float)
    p.add_argument("--max-ray-distance", type=float)
    p.add_argument("--shadow-bias", type=float)
    p.add_argument("--ground-plane", type=_plane, metavar="a,b,c,d", help="camera-space plane, normal up")
    p.add_argument("--no-shadows", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shadefield", description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    ap.add_argument("--print-config", action="store_true", help="print the resolved run config and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="subcommand", metavar="subcommand")

    p = sub.add_parser("forge", help="build a synthetic tuple dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--scenes", type=int, default=5)
    p.add_argument("--envs", type=int, default=20, help="procedural skies to generate")
    p.add_argument("--env", action="append", default=[], help="env map file (PFM/HDR), repeatable; "
                   "replaces the procedural skies")
    p.add_argument("--env-size", type=_size, default=(64, 32))
    p.add_argument("--out-size", type=_size, default=(128, 96))
    p.add_argument("--crop-size", type=_size, default=(160, 120))
    p.add_argument("--fov", type=float, default=60.0)
    p.add_argument("--split", default="train")
    p.add_argument("--annotations", help="JSON of ground polygons keyed by env id")

    p = sub.add_parser("bases", help="depth -> shading bases directory")
    _geometry_flags(p)
    _partition_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("descriptor", help="env map -> descriptor JSON")
    p.add_argument("--env", required=True)
    p.add_argument("--rotate", type=float, default=0.0, help="yaw in degrees applied to the env first")
    _partition_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("shade", help="bases + descriptor -> shading PFM")
    p.add_argument("--bases", required=True)
    p.add_argument("--descriptor", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("oracle-shade", help="dense reference shading from depth and env map")
    _geometry_flags(p)
    p.add_argument("--env", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit-bg", help="fit the background illumination estimator on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="ridge_lambda", type=float, default=1e-2)
    p.add_argument("--grid", type=_size, default=(16, 12))
    _partition_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("estimate-bg", help="background image -> descriptor JSON")
    p.add_argument("--estimator", required=True)
    p.add_argument("--background", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("harmonize", help="re-render a composite foreground for a target descriptor")
    p.add_argument("--manifest", help="harmonize every tuple of a forge manifest")
    p.add_argument("--tuple", help="single forge tuple directory")
    p.add_argument("--composite", help="composite image (PNG/PFM); loose-file mode")
    p.add_argument("--mask")
    p.add_argument("--depth")
    p.add_argument("--camera")
    p.add_argument("--src-shading", help="shading PFM the foreground was captured under")
    p.add_argument("--descriptor", help="target descriptor JSON")
    p.add_argument("--estimator", help="estimator JSON; target is estimated from the background")
    p.add_argument("--background", help="background image for --estimator in loose-file mode")
    p.add_argument("--oracle", action="store_true",
                   help="manifest mode: use the descriptor of each tuple's true env map")
    p.add_argument("--k", type=int, default=32, help="manifest --oracle mode partition size")
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--ground-plane", type=_plane, metavar="a,b,c,d")
    p.add_argument("--no-shadows", action="store_true")
    p.add_argument("--window-radius", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--out", help="output prefix (writes .png and .pfm); single mode")
    p.add_argument("--out-dir", help="output directory; manifest mode writes <tuple id>.png/.pfm")

    p = sub.add_parser("evaluate", help="fMAE/fPSNR/fSSIM of predictions over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred-dir", help="directory of <tuple id>.pfm (or .png) predictions")
    p.add_argument("--baseline", action="store_true", help="score the unharmonized composites instead")
    p.add_argument("--csv", help="per-tuple CSV (default <pred-dir>/metrics.csv)")
    p.add_argument("--json", help="aggregate JSON (default <pred-dir>/metrics.json)")
    return ap


def to_config(args) -> RunConfig:
    a = vars(args)
    inputs = {k: a.get(k) for k in ("depth", "camera", "mask", "env", "bases", "descriptor", "manifest",
                                   "estimator", "background", "composite", "src_shading", "tuple",
                                   "annotations", "pred_dir")
              if isinstance(a.get(k), str)}
    if args.subcommand == "forge":
        for i, path in enumerate(a.get("env") or []):
            inputs[f"env[{i}]"] = path
    outputs = {k: a[k] for k in ("out", "out_dir", "csv", "json") if a.get(k)}
    cfg = RunConfig(subcommand=args.subcommand or "", inputs=inputs, outputs=outputs,
                    seed=a.get("seed"), threads=args.threads)
    for flag, name in (("k", "K"), ("equirect", "equirect"), ("samples", "samples_per_cell"),
                       ("ray_step", "ray_step"), ("max_ray_distance", "max_ray_distance"),
                       ("shadow_bias", "shadow_bias"), ("ground_plane", "ground_plane"),
                       ("ridge_lambda", "ridge_lambda"), ("grid", "grid"), ("out_size", "out_size"),
                       ("crop_size", "crop_size"), ("env_size", "env_size"), ("fov", "fov_deg"),
                       ("window_radius", "window_radius"), ("eps", "eps")):
        if a.get(flag) is not None:
            setattr(cfg, name, a[flag])
    cfg.shadows = not a.get("no_shadows", False)
    return cfg


# --- loading helpers (errors carry file + field context) -------------------------------

def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: malformed JSON ({e})") from None


def _load_camera(path, shape, fov) -> Camera:
    if path is None:
        return Camera(Intrinsics.from_fov(fov, shape[1], shape[0]))
    try:
        cam = Camera.from_dict(_load_json(path))
    except KeyError as e:
        raise InputError(f"{path}: missing field {e}") from None
    except ValueError as e:
        raise InputError(f"{path}: {e}") from None
    k = cam.intrinsics
    if (k.height, k.width) != tuple(shape):
        raise InputError(f"{path}: camera is {k.width}x{k.height} but the image is {shape[1]}x{shape[0]}")
    return cam


def _load_depth(path, mask_path=None) -> DepthMap:
    values = read_pfm(path)
    if values.ndim != 2:
        raise InputError(f"{path}: depth must be single-channel, got shape {values.shape}")
    depth = DepthMap.from_array(values)
    if mask_path is not None:
        mask = read_mask(mask_path)
        if mask.shape != depth.shape:
            raise InputError(f"{mask_path}: mask {mask.shape} does not match depth {depth.shape}")
        depth = DepthMap(depth.values, depth.valid_mask & mask)
    return depth


def _load_env(path) -> EnvMap:
    img = read_image(path)
    try:
        return EnvMap(img)
    except ValueError as e:
        raise InputError(f"{path}: {e}") from None


def _load_descriptor(path) -> IlluminationDescriptor:
    try:
        return IlluminationDescriptor.from_dict(_load_json(path))
    except KeyError as e:
        raise InputError(f"{path}: missing field {e}") from None
    except ValueError as e:
        raise InputError(f"{path}: {e}") from None


def _partition(cfg: RunConfig):
    return equirect_partition(*cfg.equirect) if cfg.equirect else make_partition(cfg.K)


def _geometry(cfg: RunConfig):
    depth = _load_depth(cfg.inputs["depth"], cfg.inputs.get("mask"))
    camera = _load_camera(cfg.inputs.get("camera"), depth.shape, cfg.fov_deg)
    normals = normals_from_depth(depth, camera.intrinsics, cfg.window_radius)
    return depth, normals, camera


def _write_pair(prefix, img) -> None:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_pfm(prefix.with_suffix(".pfm"), img)
    write_png(prefix.with_suffix(".png"), img)


def _manifest_tuples(path):
    manifest = forge.load_manifest(path)
    root = Path(manifest["_root"])
    if "tuples" not in manifest:
        raise InputError(f"{path}: missing field 'tuples'")
    return manifest, root


def _tuple_target_descriptor(manifest, root, entry, part):
    env_info = manifest["envs"].get(entry["env_id"])
    if env_info is None:
        raise InputError(f"manifest: tuple {entry['id']} names unknown env {entry['env_id']!r}")
    env = _load_env(root / env_info["file"])
    return forge.target_descriptor(env, entry["rotation_deg"], part)


# --- subcommands ------------------------------------------------------------------

def cmd_forge(cfg: RunConfig, args) -> None:
    out = Path(args.out)
    rng_scenes = [forge.random_scene(np.random.default_rng([cfg.seed, 101, i]), f"scene{i:03d}")
                  for i in range(args.scenes)]
    if args.env:
        envs = [forge.EnvEntry(Path(p).stem, _load_env(p)) for p in args.env]
    else:
        envs = forge.random_envs(args.envs, cfg.seed, cfg.env_size)
    anns = forge.load_annotations(args.annotations) if args.annotations else None
    fcfg = forge.ForgeConfig(out_size=tuple(cfg.out_size), crop_size=tuple(cfg.crop_size), fov_deg=cfg.fov_deg)
    manifest = forge.build_tuples(rng_scenes, envs, cfg.seed, out, fcfg, args.split, anns)
    log.info("wrote %d tuples to %s", len(manifest["tuples"]), out)


def cmd_bases(cfg: RunConfig, args) -> None:
    depth, normals, camera = _geometry(cfg)
    bases = shading_bases(depth, normals, _partition(cfg), cfg.shadow_config(), camera)
    bases.save(args.out)
    log.info("wrote %d bases to %s", bases.K, args.out)


def cmd_descriptor(cfg: RunConfig, args) -> None:
    env = _load_env(args.env)
    desc = descriptor_from_envmap(rotate_envmap(env, args.rotate), _partition(cfg))
    desc.save(args.out)


def cmd_shade(cfg: RunConfig, args) -> None:
    try:
        bases = ShadingBases.load(args.bases)
    except (KeyError, FileNotFoundError) as e:
        raise InputError(f"{args.bases}: incomplete bases directory ({e})") from None
    desc = _load_descriptor(args.descriptor)
    if desc.partition.id != bases.partition.id:
        raise InputError(f"{args.descriptor}: partition {desc.partition.id} does not match "
                         f"bases {bases.partition.id} in {args.bases}")
    write_pfm(args.out, compose_shading(bases, desc))


def cmd_oracle_shade(cfg: RunConfig, args) -> None:
    depth, normals, camera = _geometry(cfg)
    write_pfm(args.out, reference_shading(depth, normals, _load_env(args.env), cfg.shadow_config(), camera))


def cmd_fit_bg(cfg: RunConfig, args) -> None:
    manifest, root = _manifest_tuples(args.manifest)
    part = _partition(cfg)
    training = []
    for entry in manifest["tuples"]:
        bg = read_image(root / entry["dir"] / "background.png")
        feats = bg_estimate.extract_features(bg, *cfg.grid)
        training.append((feats, _tuple_target_descriptor(manifest, root, entry, part)))
    est = bg_estimate.fit(training, cfg.ridge_lambda, tuple(cfg.grid), cfg.seed)
    est.save(args.out)
    log.info("fitted on %d tuples, training MSE %.6g", len(training), est.train_loss)


def cmd_estimate_bg(cfg: RunConfig, args) -> None:
    est = bg_estimate.BgEstimator.load(args.estimator)
    bg_estimate.estimate(est, read_image(args.background)).save(args.out)


def _harmonize_one(item, target, cfg: RunConfig, ground_plane):
    scfg = cfg.shadow_config()
    if ground_plane is not None:
        scfg = replace(scfg, ground_plane=tuple(ground_plane))
    return harmonize(item["unharmonized"], item["mask"], item["depth"], item["shading_src"], target,
                     item["camera"], scfg, eps=cfg.eps, window_radius=cfg.window_radius)


def cmd_harmonize(cfg: RunConfig, args) -> None:
    est = bg_estimate.BgEstimator.load(args.estimator) if args.estimator else None
    if args.manifest:
        if not args.out_dir:
            raise InputError("harmonize --manifest needs --out-dir")
        if est is None and not args.oracle:
            raise InputError("harmonize --manifest needs --estimator or --oracle")
        manifest, root = _manifest_tuples(args.manifest)
        part = make_partition(cfg.K)

        def work(entry):
            item = forge.load_tuple(root / entry["dir"])
            if args.oracle:
                target = _tuple_target_descriptor(manifest, root, entry, part)
            else:
                target = bg_estimate.estimate(est, read_image(root / entry["dir"] / "background.png"))
            gp = cfg.ground_plane if cfg.ground_plane is not None else item["meta"].get("ground_plane")
            return entry["id"], _harmonize_one(item, target, cfg, gp)

        with ThreadPoolExecutor(cfg.threads) as pool:
            for tid, out in pool.map(work, manifest["tuples"]):
                _write_pair(Path(args.out_dir) / tid, out)
        log.info("harmonized %d tuples into %s", len(manifest["tuples"]), args.out_dir)
        return

    if args.tuple:
        item = forge.load_tuple(args.tuple)
        bg_path = Path(args.tuple) / "background.png"
    else:
        need = {"--composite": args.composite, "--mask": args.mask, "--depth": args.depth,
                "--src-shading": args.src_shading}
        missing = [k for k, v in need.items() if v is None]
        if missing:
            raise InputError(f"harmonize needs {', '.join(missing)} (or --tuple / --manifest)")
        img = read_image(args.composite)
        depth = _load_depth(args.depth)
        mask = read_mask(args.mask)
        src = read_image(args.src_shading)
        for name, arr in (("--mask", mask), ("--depth", depth.values), ("--src-shading", src)):
            if arr.shape[:2] != img.shape[:2]:
                raise InputError(f"{name} {arr.shape[:2]} does not match --composite {img.shape[:2]}")
        item = {"unharmonized": img, "mask": mask, "depth": depth, "shading_src": src,
                "camera": _load_camera(args.camera, img.shape[:2], cfg.fov_deg), "meta": {}}
        bg_path = args.background
    if args.descriptor:
        target = _load_descriptor(args.descriptor)
    elif est is not None:
        if bg_path is None:
            raise InputError("--estimator needs --background")
        target = bg_estimate.estimate(est, read_image(bg_path))
    else:
        raise InputError("harmonize needs --descriptor or --estimator")
    if args.out is None:
        raise InputError("harmonize needs --out")
    gp = cfg.ground_plane if cfg.ground_plane is not None else item["meta"].get("ground_plane")
    _write_pair(args.out, _harmonize_one(item, target, cfg, gp))


METRICS = ("fmae", "fpsnr", "fssim")


def evaluate_manifest(manifest_path, pred_dir=None, baseline=False, threads=1) -> list[dict]:
    """Per-tuple metric rows in manifest order."""
    manifest, root = _manifest_tuples(manifest_path)

    def work(entry):
        tdir = root / entry["dir"]
        gt = read_pfm(tdir / "gt.pfm")
        mask = read_mask(tdir / "mask.png")
        if baseline:
            pred = read_pfm(tdir / "composite.pfm")
        else:
            path = Path(pred_dir) / f"{entry['id']}.pfm"
            if not path.exists():
                path = path.with_suffix(".png")
            if not path.exists():
                raise InputError(f"{pred_dir}: no prediction for tuple {entry['id']}")
            pred = read_image(path)
        if pred.shape != gt.shape:
            raise InputError(f"{entry['id']}: prediction {pred.shape} does not match ground truth {gt.shape}")
        m = evaluate_pair(pred, gt, mask)
        return {"tuple_id": entry["id"], "condition": entry.get("condition", "unknown"),
                **{k: m[k] for k in METRICS}}

    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(work, manifest["tuples"]))


def aggregate(rows: list[dict]) -> dict:
    """metric -> condition -> mean, plus an 'All' column; counts alongside."""
    conds = sorted({r["condition"] for r in rows})
    out = {m: {} for m in METRICS}
    for m in METRICS:
        for c in conds:
            out[m][c] = float(np.mean([r[m] for r in rows if r["condition"] == c]))
        out[m]["All"] = float(np.mean([r[m] for r in rows]))
    out["count"] = {c: sum(r["condition"] == c for r in rows) for c in conds}
    out["count"]["All"] = len(rows)
    return out


def cmd_evaluate(cfg: RunConfig, args) -> None:
    if not args.baseline and not args.pred_dir:
        raise InputError("evaluate needs --pred-dir or --baseline")
    rows = evaluate_manifest(args.manifest, args.pred_dir, args.baseline, cfg.threads)
    base = Path(args.pred_dir) if args.pred_dir else Path(args.manifest).parent
    csv_path = Path(args.csv) if args.csv else base / "metrics.csv"
    json_path = Path(args.json) if args.json else base / "metrics.json"
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("tuple_id",) + METRICS)
        for r in rows:
            w.writerow([r["tuple_id"]] + [repr(r[m]) for m in METRICS])
    json_path.write_text(json.dumps(aggregate(rows), indent=1))
    agg = aggregate(rows)
    log.info("All: fMAE %.4f  fPSNR %.2f  fSSIM %.4f", agg["fmae"]["All"], agg["fpsnr"]["All"],
             agg["fssim"]["All"])


COMMANDS = {"forge": cmd_forge, "bases": cmd_bases, "descriptor": cmd_descriptor, "shade": cmd_shade,
            "oracle-shade": cmd_oracle_shade, "fit-bg": cmd_fit_bg, "estimate-bg": cmd_estimate_bg,
            "harmonize": cmd_harmonize, "evaluate": cmd_evaluate}


def _set_threads(n: int) -> None:
    import numba
    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = to_config(args)
    if args.print_config:
        print(cfg.dump())
        return 0
    if not args.subcommand:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg.validate()
        _set_threads(cfg.threads)
        COMMANDS[args.subcommand](cfg, args)
    except (InputError, FileNotFoundError, ValueError, KeyError, json.JSONDecodeError) as e:
        log.error("%s: %s", args.subcommand, e)
        return 2
    except Exception:
        log.exception("%s failed", args.subcommand)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
