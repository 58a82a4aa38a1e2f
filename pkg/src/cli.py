"""
Command line: stitching, estimation, single-image warps and the diagnostic emitters.

Every command returns an exit code; failures print a one-line JSON error to stderr.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np
import pandas as pd

from src import config
from src.compositing import canvas_bounds, read_raster, warp_image, write_mask, write_raster
from src.diagnostics import compare_metrics, diagnose_mesh, scale_svg, scale_table, write_table
from src.errors import AffineDegenerate, InputInvalid, InputMissing, NonMonotoneScale, StitchError, exit_code_for
from src.estimation import (
    detect_and_match,
    estimate_rectified,
    load_csv_pair,
    load_jsonl,
    ransac,
    transfer_errors,
)
from src.geometry import Homography
from src.pipeline import StitchOptions, stitch_pair, stitch_sequence, target_side
from src.quasiwarp import build

logger = logging.getLogger(__name__)


# ── Helpers ─────────────────────────────────────────────────────────────────

def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"{type(obj).__name__} is not JSON serialisable")


def write_json(data, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False, indent=2, default=_jsonable)
        f.write("\n")


def _stem(path):
    return os.path.splitext(path)[0]


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def resolve_config(args):
    """Config file (if any) with explicit flags applied on top."""
    cfg = config.RunConfig.from_json(args.config) if args.config else config.RunConfig()
    overrides = {
        "mode": getattr(args, "mode", None),
        "rectify": getattr(args, "rectify", None),
        "refine_partition": getattr(args, "refine_partition", None),
        "fallback_to_homography": getattr(args, "fallback", None),
        "feather_px": getattr(args, "feather", None),
        "ransac_threshold": getattr(args, "ransac_threshold", None),
        "ransac_iterations": getattr(args, "ransac_iterations", None),
        "seed": getattr(args, "seed", None),
        "ref_index": getattr(args, "ref_index", None),
        "x_star": getattr(args, "x_star", None),
        "x_range": getattr(args, "x_range", None),
        "y_range": getattr(args, "y_range", None),
        "steps": getattr(args, "steps", None),
        "scale_samples": getattr(args, "samples", None),
    }
    return cfg.merged(overrides)


def load_homography(args, cfg):
    """--homography file, then --h values, then the config's `homography` entry."""
    path = getattr(args, "homography", None)
    if path:
        if not os.path.exists(path):
            raise InputMissing(f"homography file not found: {path}")
        return Homography.load(path)
    values = getattr(args, "h", None) or cfg.homography
    if values is None:
        raise InputMissing("no homography: pass --homography FILE or --h with nine numbers")
    return Homography.from_matrix(np.asarray(values, dtype=float).reshape(3, 3))


def load_correspondences(args):
    """JSON-lines file, a CSV pair, or None when --detect asks for the built-in matcher."""
    if getattr(args, "corrs", None):
        return load_jsonl(args.corrs)
    if getattr(args, "corrs_target", None) or getattr(args, "corrs_ref", None):
        if not (args.corrs_target and args.corrs_ref):
            raise InputMissing("--corrs-target and --corrs-ref must be given together")
        return load_csv_pair(args.corrs_target, args.corrs_ref)
    if getattr(args, "detect", False):
        return None
    raise InputMissing("no correspondences: pass --corrs, --corrs-target/--corrs-ref or --detect")


def _partition_column(cfg, fallback=0.0):
    return float(cfg.x_star) if cfg.x_star is not None else float(fallback)


def _save_mosaic(mosaic, out):
    _ensure_parent(out)
    written = mosaic.save(out)
    report_path = f"{_stem(out)}_report.json"
    write_json(mosaic.report, report_path)
    return written + [report_path]


# ── Commands ────────────────────────────────────────────────────────────────

def cmd_stitch(args, cfg):
    target = read_raster(args.target)
    reference = read_raster(args.ref)
    corrs = load_correspondences(args)
    mosaic = stitch_pair(target, reference, corrs, StitchOptions.from_config(cfg), cfg.to_dict())
    written = _save_mosaic(mosaic, args.out)

    stage = mosaic.report["pairs"][0]
    print(f"Stitched {args.target} onto {args.ref}: {stage['inliers']}/{stage['total']} inliers, "
          f"warp={stage['warp']}, canvas {mosaic.frame.width}x{mosaic.frame.height}")
    for path in written:
        print(f"Saved: {path}")
    return 0


def cmd_stitch_multi(args, cfg):
    images = [read_raster(p) for p in args.images]
    if args.corrs:
        if len(args.corrs) != len(images) - 1:
            raise InputInvalid(f"{len(images)} images need {len(images) - 1} correspondence files")
        corrs = [load_jsonl(p) for p in args.corrs]
    elif args.detect:
        corrs = [None] * (len(images) - 1)
    else:
        raise InputMissing("no correspondences: pass one --corrs file per adjacent pair or --detect")

    mosaic = stitch_sequence(images, corrs, cfg.ref_index, StitchOptions.from_config(cfg), cfg.to_dict())
    written = _save_mosaic(mosaic, args.out)
    print(f"Stitched {len(images)} images around reference {mosaic.report['reference_index']}: "
          f"canvas {mosaic.frame.width}x{mosaic.frame.height}")
    for path in written:
        print(f"Saved: {path}")
    return 0


def cmd_estimate(args, cfg):
    corrs = load_correspondences(args)
    target = read_raster(args.target) if args.target else None
    ref = read_raster(args.ref) if args.ref else None
    if corrs is None:
        if target is None or ref is None:
            raise InputMissing("--detect needs --target and --ref images")
        corrs = detect_and_match(target, ref)

    opts = StitchOptions.from_config(cfg)
    H, mask = ransac(corrs, opts.ransac)
    if cfg.rectify:
        if target is None:
            raise InputMissing("--rectify needs --target to know the boundary column")
        # without a reference the target is assumed to sit right of it
        side = target_side(H, target.dims, ref.dims) if ref is not None else "right"
        boundary = target.width - 1 if side == "right" else 0
        H = estimate_rectified(corrs, target.width, target.height, opts.ransac, boundary_x=boundary)
        mask = transfer_errors(H, corrs.src, corrs.dst) < opts.ransac.inlier_threshold_px ** 2

    inl = corrs.subset(mask)
    fx, fy = H.forward_xy(inl.src[:, 0], inl.src[:, 1])
    rms = float(np.sqrt(np.mean((fx - inl.dst[:, 0]) ** 2 + (fy - inl.dst[:, 1]) ** 2))) if len(inl) else 0.0

    _ensure_parent(args.out)
    H.save(args.out)
    stats = {
        "h": list(H.h),
        "inliers": int(mask.sum()),
        "total": len(corrs),
        "inlier_ratio": float(mask.mean()) if len(corrs) else 0.0,
        "inlier_rms_px": rms,
        "inlier_mask": [bool(v) for v in mask],
        "rectified": bool(cfg.rectify),
        "config": cfg.to_dict(),
    }
    stats_path = f"{_stem(args.out)}_stats.json"
    write_json(stats, stats_path)
    print(f"Estimated homography: {stats['inliers']}/{stats['total']} inliers, RMS {rms:.3f} px")
    print(f"Saved: {args.out}")
    print(f"Saved: {stats_path}")
    return 0


def cmd_warp(args, cfg):
    img = read_raster(args.image)
    H = load_homography(args, cfg)
    warp = H
    if cfg.mode == "quasi":
        x_star = _partition_column(cfg, (img.width - 1) / 2.0)
        try:
            warp = build(H, x_star)
        except (AffineDegenerate, NonMonotoneScale) as e:
            if not cfg.fallback_to_homography:
                raise
            logger.info("falling back to the plain homography: %s", e)

    frame = canvas_bounds(warp, img.dims, None, cfg.canvas_cap)
    warped = warp_image(warp, img, frame)
    _ensure_parent(args.out)
    write_raster(warped, args.out)
    mask_path = f"{_stem(args.out)}_mask.png"
    write_mask(warped.valid, mask_path)
    print(f"Warped {args.image} with {warp.kind}: canvas {frame.width}x{frame.height}, "
          f"origin ({frame.origin.x:g}, {frame.origin.y:g})")
    print(f"Saved: {args.out}")
    print(f"Saved: {mask_path}")
    return 0


def cmd_diagnose_mesh(args, cfg):
    H = load_homography(args, cfg)
    x_star = _partition_column(cfg)
    try:
        svg, info = diagnose_mesh(H, x_star, cfg.x_range, cfg.y_range, cfg.steps, cfg.mode)
    except AffineDegenerate as e:
        raise AffineDegenerate(
            f"{e}; an affine homography has no horizon row, rerun with --mode homography "
            "to draw its mesh"
        ) from e

    _ensure_parent(args.out)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(svg)
    info_path = f"{_stem(args.out)}_mesh.json"
    write_json(info, info_path)
    print(f"Mesh {cfg.steps[0]}x{cfg.steps[1]} over x {cfg.x_range}, y {cfg.y_range}; y* = {info['y_star']}")
    print(f"Saved: {args.out}")
    print(f"Saved: {info_path}")
    return 0


def cmd_diagnose_scale(args, cfg):
    H = load_homography(args, cfg)
    x_star = _partition_column(cfg)
    xs = np.linspace(cfg.x_range[0], cfg.x_range[1], cfg.scale_samples)
    df, y_row, note = scale_table(H, x_star, xs)

    _ensure_parent(args.out)
    write_table(df, args.out)
    svg_path = f"{_stem(args.out)}.svg"
    with open(svg_path, "w", encoding="utf-8") as f:
        f.write(scale_svg(df, x_star))
    print(f"Scale profile along y = {y_row:g}, x* = {x_star:g}, {len(df)} samples")
    if note:
        print(f"Note: {note}")
    print(f"Saved: {args.out}")
    print(f"Saved: {svg_path}")
    return 0


def cmd_metrics(args, cfg):
    H = load_homography(args, cfg)
    x_star = _partition_column(cfg)
    modes = ("homography",) if cfg.mode == "homography" else ("homography", "quasi")
    result = compare_metrics(H, x_star, cfg.x_range, cfg.y_range, cfg.steps, cfg.scale_samples, modes)

    _ensure_parent(args.out)
    write_json(result, args.out)
    print(f"Metrics at x* = {x_star:g}, y* = {result['y_star']:g}")
    if result.get("note"):
        print(f"Note: {result['note']}")
    print(f"Saved: {args.out}")
    if args.csv:
        rows = [result[m] for m in modes if result.get(m)]
        write_table(pd.DataFrame(rows), args.csv)
        print(f"Saved: {args.csv}")
    return 0


COMMANDS = {
    "stitch": cmd_stitch,
    "stitch-multi": cmd_stitch_multi,
    "estimate": cmd_estimate,
    "warp": cmd_warp,
    "diagnose-mesh": cmd_diagnose_mesh,
    "diagnose-scale": cmd_diagnose_scale,
    "metrics": cmd_metrics,
}


# ── Parser ──────────────────────────────────────────────────────────────────

def _add_common(p):
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def _add_corrs(p):
    p.add_argument("--corrs", help="JSON-lines correspondence file")
    p.add_argument("--corrs-target", help="CSV of x,y points in the target")
    p.add_argument("--corrs-ref", help="CSV of x,y points in the reference, row-aligned")
    p.add_argument("--detect", action="store_true", help="use the built-in corner matcher")


def _add_estimation(p):
    p.add_argument("--rectify", action="store_const", const=True, help="keep the outer boundary vertical")
    p.add_argument("--ransac-threshold", type=float)
    p.add_argument("--ransac-iterations", type=int)
    p.add_argument("--seed", type=int)


def _add_warp_mode(p):
    p.add_argument("--mode", choices=("quasi", "homography"))
    p.add_argument("--x-star", type=float, help="partition column in the target")
    p.add_argument("--no-fallback", dest="fallback", action="store_const", const=False,
                   help="fail instead of using the plain homography when no quasi-homography exists")


def _add_stitching(p, refine=True):
    _add_estimation(p)
    _add_warp_mode(p)
    if refine:
        p.add_argument("--refine-partition", action="store_const", const=True,
                       help="second pass with x* moved just outside the seam")
    p.add_argument("--feather", type=int, help="feather width in px along the seam")


def _add_homography(p):
    p.add_argument("--homography", help="text file with nine numbers, row-major")
    p.add_argument("--h", type=float, nargs=9, metavar="V", help="nine numbers, row-major")


def _add_grid(p):
    p.add_argument("--x-range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--y-range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--steps", type=int, nargs=2, metavar=("NX", "NY"))


def build_parser():
    parser = argparse.ArgumentParser(prog="quasiwarp", description="Quasi-homography warps and stitching.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stitch", help="stitch a target onto a reference")
    _add_common(p)
    p.add_argument("--target", required=True)
    p.add_argument("--ref", required=True)
    _add_corrs(p)
    _add_stitching(p)
    p.add_argument("--out", required=True, help="mosaic PNG; companions are written next to it")

    p = sub.add_parser("stitch-multi", help="stitch an ordered left-to-right sequence")
    _add_common(p)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--corrs", nargs="+", help="one JSON-lines file per adjacent pair (i -> i+1)")
    p.add_argument("--detect", action="store_true")
    p.add_argument("--ref-index", type=int)
    _add_stitching(p, refine=False)
    p.add_argument("--out", required=True)

    p = sub.add_parser("estimate", help="estimate the target -> reference homography")
    _add_common(p)
    p.add_argument("--target")
    p.add_argument("--ref")
    _add_corrs(p)
    _add_estimation(p)
    p.add_argument("--out", required=True, help="homography text file")

    p = sub.add_parser("warp", help="resample one image through a homography or its quasi-homography")
    _add_common(p)
    p.add_argument("--image", required=True)
    _add_homography(p)
    _add_warp_mode(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("diagnose-mesh", help="side-by-side mesh SVG")
    _add_common(p)
    _add_homography(p)
    p.add_argument("--mode", choices=("quasi", "homography"))
    p.add_argument("--x-star", type=float)
    _add_grid(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("diagnose-scale", help="scale profile CSV and SVG along the horizon row")
    _add_common(p)
    _add_homography(p)
    p.add_argument("--x-star", type=float)
    p.add_argument("--x-range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--samples", type=int)
    p.add_argument("--out", required=True, help="CSV path; the SVG is written next to it")

    p = sub.add_parser("metrics", help="distortion metrics for a homography and its quasi-homography")
    _add_common(p)
    _add_homography(p)
    p.add_argument("--mode", choices=("quasi", "homography"))
    p.add_argument("--x-star", type=float)
    _add_grid(p)
    p.add_argument("--samples", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="optional CSV copy of the metric rows")

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except StitchError as e:
        print(json.dumps(e.as_dict(), ensure_ascii=False), file=sys.stderr)
        return exit_code_for(e)
    except Exception as e:
        logger.exception("internal error")
        print(json.dumps({"error": "internal", "type": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return exit_code_for(e)
