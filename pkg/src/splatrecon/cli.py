"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sio
from .gaussians import DecodeConfig, PixelGaussianGrid, decode_pixel_gaussians, ply_write
from .harness import (RUN_ROOT_ENV, SWEEP_AXES, ConfigError, ExperimentConfig, StageError, build_pipeline,
                      default_run_root, evaluate, gradcheck, run_fit, run_sweep, _report_extras)
from .occlusion import OcclusionError, OcclusionSpec, apply_occlusion, coverage, generate_mask
from .rig import RigSpec, build_rig, input_plus_targets
from .scene import SceneError, default_humanoid, posed_skeleton, raymarch_render

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3
TABLE_ORDER = ("mean_psnr", "mean_ssim", "mean_perceptual_proxy", "cd_cm", "p2s_cm", "nc")


def _load_config(args) -> ExperimentConfig:
    base = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    cfg = ExperimentConfig.from_json(base)
    over = {}
    if getattr(args, "steps", None) is not None:
        over["optim"] = replace(cfg.optim, total_steps=args.steps, warmup_steps=min(cfg.optim.warmup_steps, args.steps))
    if getattr(args, "lr", None) is not None:
        over["optim"] = replace(over.get("optim", cfg.optim), lr0=args.lr)
    for name in ("seed", "grid_size", "input_azimuth", "provider", "provider_dir", "eval_mode", "workers"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    if getattr(args, "stereo", None) is not None:
        over["stereo_separation"] = args.stereo
    if getattr(args, "occlusion", None) is not None:
        over["occlusion"] = None if args.occlusion == 0 else replace(cfg.occlusion or OcclusionSpec(),
                                                                      fraction=args.occlusion)
    if getattr(args, "size", None) is not None:
        over["rig"] = replace(cfg.rig, width=args.size, height=args.size)
    try:
        return replace(cfg, **over)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _run_root(args) -> Path:
    return Path(args.run_root) if args.run_root else default_run_root()


def _print_table(metrics: dict) -> None:
    for k in TABLE_ORDER:
        v = metrics.get(k)
        print(f"{k:<24}{'n/a' if v is None else f'{v:.4f}'}")


def cmd_rig(args) -> int:
    spec = RigSpec(n_views=args.views, radius=args.radius, elevation=args.elevation, width=args.size, height=args.size,
                   azimuth_offset=args.azimuth_offset)
    text = json.dumps(build_rig(spec).to_json(), indent=2)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def cmd_render_scene(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = default_humanoid(posed_skeleton(args.pose_seed))
    scene.save(out / "scene.json")
    rig = build_rig(RigSpec(width=args.size, height=args.size))
    for i, cam in enumerate(rig.cameras):
        raymarch_render(scene, cam).save(out / f"view_{i:02d}")
    print(f"wrote {len(rig.cameras)} views to {out}")
    return EXIT_OK


def cmd_occlude(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = RigSpec(width=args.size, height=args.size)
    cam, _ = input_plus_targets(spec, args.input_azimuth)
    ref = raymarch_render(default_humanoid(posed_skeleton(args.pose_seed)), cam)
    occ = OcclusionSpec(fraction=args.fraction, shape=args.shape, max_pieces=args.max_pieces, seed=args.seed)
    mask = generate_mask(ref.alpha, occ)
    sio.save_rgb_png(out / "input_occluded.png", apply_occlusion(ref.rgb, mask, occ.fill))
    sio.save_mask_png(out / "occluder_mask.png", mask)
    cov = coverage(mask, ref.alpha > 0.5)
    (out / "occlusion.json").write_text(json.dumps({"spec": occ.to_json(), "coverage": cov}, indent=2))
    print(f"coverage {cov:.4f}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    res = run_fit(cfg, _run_root(args), reuse=args.reuse, force=args.force)
    print(f"run directory: {res.run_dir}")
    _print_table(res.metrics)
    return EXIT_OK


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        cfg = ExperimentConfig.from_json(json.loads((run_dir / "config.json").read_text()))
        grid = PixelGaussianGrid.load(run_dir / "grid.bin")
    except OSError as exc:
        raise ConfigError(f"not a run directory: {run_dir} ({exc})") from exc
    if args.eval_mode:
        cfg = replace(cfg, eval_mode=args.eval_mode)
    p = build_pipeline(cfg)
    gset = decode_pixel_gaussians(grid, DecodeConfig.for_radius(cfg.rig.radius))
    thresholds = [cfg.point_threshold] if not args.sweep_threshold else [0.02, 0.05, 0.1, 0.2, 0.5]
    results = {}
    for t in thresholds:
        rep = evaluate(gset, p if t == cfg.point_threshold else build_pipeline(replace(cfg, point_threshold=t)))
        _report_extras(rep, p)
        results[t] = rep.to_json()
    main = results.get(cfg.point_threshold) or next(iter(results.values()))
    _print_table(main)
    out = Path(args.out) if args.out else run_dir / "eval.json"
    payload = main if len(results) == 1 else {"thresholds": {str(k): v for k, v in results.items()}}
    out.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    levels = None
    if args.levels:
        if args.axis == "provider":
            levels = [tuple(float(x) for x in s.split(":")) for s in args.levels.split(",")]
        else:
            levels = [float(x) for x in args.levels.split(",")]
    agg = run_sweep(cfg, args.axis, _run_root(args), levels)
    print(f"sweep directory: {agg['dir']}")
    for r in agg["rows"]:
        ps = "n/a" if r["mean_psnr"] is None else f"{r['mean_psnr']:.3f}"
        print(f"{json.dumps(r['level']):<14}{r['status']:<8}{ps}")
    return EXIT_OK if all(r["status"] == "ok" for r in agg["rows"]) else EXIT_STAGE


def cmd_gradcheck(args) -> int:
    rep = gradcheck(args.seed, args.gaussians, args.size, args.tol)
    text = json.dumps(rep, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK if rep["pass"] else EXIT_STAGE


def cmd_export_ply(args) -> int:
    src = Path(args.grid)
    if src.is_dir():
        cfg = ExperimentConfig.from_json(json.loads((src / "config.json").read_text()))
        radius = cfg.rig.radius
        src = src / "grid.bin"
    else:
        radius = args.radius
    try:
        grid = PixelGaussianGrid.load(src)
    except OSError as exc:
        raise ConfigError(f"cannot read grid {src}: {exc}") from exc
    gset = decode_pixel_gaussians(grid, DecodeConfig.for_radius(radius))
    if args.min_opacity > 0:
        gset = gset.subset(np.flatnonzero(gset.opacities >= args.min_opacity))
    ply_write(gset, args.out, binary=not args.ascii)
    print(f"wrote {len(gset)} Gaussians to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splatrecon", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--run-root", default=None, help=f"run directory root (default ${RUN_ROOT_ENV} or ./runs)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rig", help="print the camera rig as JSON")
    p.add_argument("--views", type=int, default=16)
    p.add_argument("--radius", type=float, default=2.7)
    p.add_argument("--elevation", type=float, default=0.0)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--azimuth-offset", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_rig)

    p = sub.add_parser("render-scene", help="sphere-trace the humanoid from every rig view")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--pose-seed", type=int, default=None)
    p.set_defaults(fn=cmd_render_scene)

    p = sub.add_parser("occlude", help="occlude the input view at a coverage fraction")
    p.add_argument("--out", required=True)
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--shape", default="rectangles")
    p.add_argument("--max-pieces", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--input-azimuth", type=float, default=0.0)
    p.add_argument("--pose-seed", type=int, default=None)
    p.set_defaults(fn=cmd_occlude)

    def fit_flags(p):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--steps", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--grid-size", type=int)
        p.add_argument("--size", type=int, help="render resolution")
        p.add_argument("--input-azimuth", type=float)
        p.add_argument("--stereo", type=float, help="second input separation in degrees")
        p.add_argument("--occlusion", type=float, help="input occlusion fraction")
        p.add_argument("--provider", choices=("oracle", "file", "degraded"))
        p.add_argument("--provider-dir")
        p.add_argument("--eval-mode", choices=("holdout", "all"))
        p.add_argument("--workers", type=int)

    p = sub.add_parser("fit", help="run the full pipeline for one configuration")
    fit_flags(p)
    p.add_argument("--reuse", action="store_true", help="return an existing completed run unchanged")
    p.add_argument("--force", action="store_true", help="recompute an existing run")
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("eval", help="recompute metrics for a run directory")
    p.add_argument("run_dir")
    p.add_argument("--eval-mode", choices=("holdout", "all"))
    p.add_argument("--sweep-threshold", action="store_true", help="report geometry at several opacity thresholds")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="one run per level along an axis")
    fit_flags(p)
    p.add_argument("axis", choices=SWEEP_AXES)
    p.add_argument("--levels", help="comma-separated levels; provider levels as sigma:jitter")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of the renderer and the full chain")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gaussians", type=int, default=16)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("export-ply", help="decode a grid (or run directory) to a PLY point cloud of Gaussians")
    p.add_argument("grid")
    p.add_argument("out")
    p.add_argument("--radius", type=float, default=2.7, help="rig radius when a bare grid file is given")
    p.add_argument("--min-opacity", type=float, default=0.0)
    p.add_argument("--ascii", action="store_true")
    p.set_defaults(fn=cmd_export_ply)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, OcclusionError, SceneError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
