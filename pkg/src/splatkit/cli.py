"""Command-line entry points.

Subcommands: synth, train, render, eval, sweep, precompute-priors. Flags
mirror the flat run-config keys; the prior service endpoint can also come
from the SPLATKIT_PRIOR_ENDPOINT environment variable. Report paths write
matplotlib figures next to the machine-readable files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .colmap import load_colmap_scene
from .errors import ConfigurationError, SplatError
from .evaluate import config_hash, evaluate_cloud, make_llff_split, sweep
from .io import (CONFIG_DEFAULTS, load_cloud, load_run_config, read_pfm,
                 save_cloud, save_image, write_pfm)
from .priors import FilePriorSource, OraclePriorSource, ServicePriorSource
from .scene import Camera, quat_to_rotmat
from .synth import synth_scene
from .train import TrainConfig, train, weights_from_run_config

ENDPOINT_ENV = "SPLATKIT_PRIOR_ENDPOINT"


def _add_config_flags(parser):
    parser.add_argument("--config", help="JSON run-config file")
    skip = {"scene_dir", "out_dir"}
    for key, default in CONFIG_DEFAULTS.items():
        if key in skip:
            continue
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            parser.add_argument(flag, dest=key, default=None,
                                choices=("true", "false"), help=f"default {default}")
        else:
            parser.add_argument(flag, dest=key, default=None, metavar="V",
                                help=f"default {default}")


def _gather_config(args, scene_dir=None, out_dir=None):
    overrides = {}
    for key in CONFIG_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if scene_dir is not None:
        overrides["scene_dir"] = str(scene_dir)
    if out_dir is not None:
        overrides["out_dir"] = str(out_dir)
    env_endpoint = os.environ.get(ENDPOINT_ENV)
    if env_endpoint and "prior_endpoint" not in overrides:
        overrides["prior_endpoint"] = env_endpoint
    return load_run_config(getattr(args, "config", None), overrides)


def _make_priors(config, scene_dir):
    backend = config["prior_backend"]
    if backend == "oracle":
        gt_path = Path(scene_dir) / "gt_cloud.sidg"
        if not gt_path.exists():
            raise ConfigurationError(
                "oracle prior backend needs gt_cloud.sidg in the scene directory "
                "(synthetic scenes only); use --prior-backend file or service")
        return OraclePriorSource(load_cloud(gt_path),
                                 background=tuple(config["background"]))
    if backend == "file":
        prior_dir = config["prior_dir"] or str(Path(scene_dir) / "depths")
        if not Path(prior_dir).is_dir():
            raise ConfigurationError(f"prior_dir does not exist: {prior_dir}")
        return FilePriorSource(prior_dir)
    endpoint = config["prior_endpoint"]
    if not endpoint:
        raise ConfigurationError(
            f"service prior backend needs --prior-endpoint or ${ENDPOINT_ENV}")
    return ServicePriorSource(endpoint)


def _load_scene(config, train_views):
    scene, init_cloud = load_colmap_scene(config["scene_dir"], train_views=train_views)
    return scene, init_cloud


def cmd_synth(args):
    width, height = (int(v) for v in args.size.lower().split("x"))
    synth_scene(args.out, n_gaussians=args.gaussians, n_views=args.views,
                width=width, height=height, seed=args.seed,
                sfm_fraction=args.sfm_fraction, sfm_noise=args.sfm_noise,
                arc_span_deg=args.arc_span)
    print(f"wrote synthetic scene to {args.out}")
    return 0


def cmd_train(args):
    config = _gather_config(args, scene_dir=args.scene, out_dir=args.out)
    scene, init_cloud = _load_scene(config, args.train_views)
    priors = _make_priors(config, args.scene)
    weights = weights_from_run_config(config)
    tconfig = TrainConfig.from_run_config(config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(json.dumps(config, indent=1, sort_keys=True))
    cloud, trace = train(scene, priors, weights, tconfig, init_cloud, out_dir=out_dir)
    from .figures import save_loss_curves
    save_loss_curves(trace, out_dir / "loss_curves.png")
    print(f"trained {tconfig.iterations} iterations; final cloud of {len(cloud)} "
          f"Gaussians in {out_dir / 'cloud_final.sidg'}")
    return 0


def _camera_from_pose_file(path):
    spec = json.loads(Path(path).read_text())
    if "qvec" in spec:
        q = np.asarray(spec["qvec"], dtype=np.float64)
        rotation = quat_to_rotmat(q / np.linalg.norm(q))
    else:
        rotation = np.asarray(spec["rotation"], dtype=np.float64).reshape(3, 3)
    return Camera(fx=spec["fx"], fy=spec["fy"], cx=spec["cx"], cy=spec["cy"],
                  width=int(spec["width"]), height=int(spec["height"]),
                  rotation=rotation,
                  translation=np.asarray(spec["tvec"], dtype=np.float64),
                  near=spec.get("near", 0.01), far=spec.get("far", 100.0))


def cmd_render(args):
    cloud = load_cloud(args.checkpoint)
    if args.pose:
        camera = _camera_from_pose_file(args.pose)
    else:
        if args.scene is None or args.camera_index is None:
            raise ConfigurationError("render needs --pose, or --scene with --camera-index")
        scene, _ = load_colmap_scene(args.scene)
        camera = scene.cameras[args.camera_index]
    from .rasterize import render as render_cloud
    background = tuple(float(v) for v in args.background.split(","))
    out = render_cloud(cloud, camera, background)
    save_image(args.out, out.color)
    if args.depth_out:
        write_pfm(args.depth_out, out.depth)
    print(f"rendered {camera.width}x{camera.height} image to {args.out}")
    return 0


def cmd_eval(args):
    config = _gather_config(args, scene_dir=args.scene)
    scene, _ = _load_scene(config, args.train_views)
    cloud = load_cloud(args.checkpoint)
    indices = scene.test_indices or list(range(len(scene.cameras)))
    report = evaluate_cloud(cloud, scene, indices,
                            background=tuple(config["background"]),
                            config_hash=config_hash(config), seed=config["seed"])
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report.save(report_path)
    table = report.to_table()
    report_path.with_suffix(".txt").write_text(table + "\n")
    from .figures import save_eval_bars
    save_eval_bars(report, report_path.with_suffix(".png"))
    print(table)
    return 0


def cmd_sweep(args):
    config = _gather_config(args, scene_dir=args.scene, out_dir=args.out)
    scene, init_cloud = _load_scene(config, args.train_views)
    priors = _make_priors(config, args.scene)
    weights = weights_from_run_config(config)
    tconfig = TrainConfig.from_run_config(config)
    values = [float(v) for v in args.values.split(",")]
    result = sweep(args.axis, values, scene, priors, weights, tconfig, init_cloud)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_path = out_dir / f"sweep_{args.axis}.tsv"
    result.save(data_path)
    from .figures import save_sweep_curve
    save_sweep_curve(result, data_path.with_suffix(".png"))
    for value, mean_psnr in result.rows:
        print(f"{args.axis}={value:g}: mean PSNR {mean_psnr:.3f} dB")
    print(f"data: {data_path}")
    return 0


def cmd_precompute_priors(args):
    endpoint = args.endpoint or os.environ.get(ENDPOINT_ENV)
    if not endpoint:
        raise ConfigurationError(f"--endpoint or ${ENDPOINT_ENV} required")
    scene, _ = load_colmap_scene(args.scene)
    source = ServicePriorSource(endpoint)
    out_dir = Path(args.out or (Path(args.scene) / "priors"))
    out_dir.mkdir(parents=True, exist_ok=True)
    from .io import write_femb
    manifest = {}
    grid = args.crop_grid
    for v, (cam, image) in enumerate(zip(scene.cameras, scene.images)):
        stem = scene.image_stems[v]
        depth = source.get_depth(view=cam, rendered_image=image)
        write_pfm(out_dir / f"{stem}.pfm", depth.values)
        crop = min(args.crop_size, cam.height, cam.width)
        crops = {}
        for gr in range(grid):
            for gc in range(grid):
                r0 = 0 if grid == 1 else round(gr * (cam.height - crop) / (grid - 1))
                c0 = 0 if grid == 1 else round(gc * (cam.width - crop) / (grid - 1))
                crop_id = f"{gr}_{gc}"
                emb = source.get_features(image[r0:r0 + crop, c0:c0 + crop])
                write_femb(out_dir / f"{stem}.{crop_id}.femb", emb.values)
                crops[crop_id] = [int(r0), int(c0), int(crop), int(crop)]
        manifest[stem] = crops
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    source.close()
    print(f"wrote priors for {len(scene.cameras)} views to {out_dir}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="splatkit",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic test scene")
    p.add_argument("--out", required=True)
    p.add_argument("--gaussians", type=int, default=200)
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--size", default="64x64", help="WxH")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sfm-fraction", type=float, default=0.5)
    p.add_argument("--sfm-noise", type=float, default=0.0)
    p.add_argument("--arc-span", type=float, default=100.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="optimize a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-views", type=int, default=None,
                   help="apply the every-eighth split with this many training views")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a checkpoint from a camera")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene")
    p.add_argument("--camera-index", type=int)
    p.add_argument("--pose", help="JSON pose file (fx fy cx cy width height qvec/rotation tvec)")
    p.add_argument("--out", required=True)
    p.add_argument("--depth-out")
    p.add_argument("--background", default="0,0,0")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM report on held-out views")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--report", required=True, help="key-value report path (.kv)")
    p.add_argument("--train-views", type=int, default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train/eval across regularizer weights")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--axis", required=True, choices=("omega_sem", "omega_depth"))
    p.add_argument("--values", required=True, help="comma-separated weights")
    p.add_argument("--train-views", type=int, default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("precompute-priors",
                       help="fetch depth/feature priors from a service into files")
    p.add_argument("--scene", required=True)
    p.add_argument("--endpoint")
    p.add_argument("--out")
    p.add_argument("--crop-grid", type=int, default=2)
    p.add_argument("--crop-size", type=int, default=126)
    p.set_defaults(func=cmd_precompute_priors)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SplatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
