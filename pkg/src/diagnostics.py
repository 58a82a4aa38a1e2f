"""
Diagnostic emitters: side-by-side mesh SVGs, scale-profile CSV/SVG and
distortion metrics comparing a homography with its quasi-homography.

All numbers are written with 12 significant digits; magnitudes below 1e-9
are written as 0 so the files are byte-stable.
"""

import logging

import numpy as np
import pandas as pd

from src import config
from src.errors import AffineDegenerate, NonMonotoneScale
from src.geometry import collinearity_residual
from src.quasiwarp import build, mesh

logger = logging.getLogger(__name__)

PANEL_SIZE = 400
PANEL_GAP = 20
TITLE_HEIGHT = 30

SVG_STYLE = """<style>
  polyline { fill: none; vector-effect: non-scaling-stroke; }
  .mesh { stroke: #233554; stroke-width: 1; }
  .horizon { stroke: #d62728; stroke-width: 2; }
  .partition { stroke: #1f77b4; stroke-width: 2; }
  .profile-h { stroke: #8892b0; stroke-width: 2; }
  .profile-q { stroke: #d62728; stroke-width: 2; }
  text { font-family: sans-serif; font-size: 14px; fill: #0a192f; }
</style>"""


# ── Formatting ──────────────────────────────────────────────────────────────

def clean(v):
    """Float with magnitudes below 1e-9 flushed to 0."""
    v = float(v)
    return 0.0 if abs(v) < 1e-9 else v


def fmt(v):
    return config.NUMBER_FORMAT % clean(v)


def _points_attr(xs, ys):
    return " ".join(f"{fmt(x)},{fmt(y)}" for x, y in zip(xs, ys))


def _runs(xs, ys):
    """Split a node sequence into runs of finite points (invalid nodes break lines)."""
    ok = np.isfinite(xs) & np.isfinite(ys)
    run = []
    for x, y, good in zip(xs, ys, ok):
        if good:
            run.append((x, y))
        elif run:
            yield run
            run = []
    if run:
        yield run


def _polyline(cls, xs, ys):
    out = []
    for run in _runs(np.asarray(xs), np.asarray(ys)):
        if len(run) < 2:
            continue
        rx, ry = zip(*run)
        out.append(f'<polyline class="{cls}" points="{_points_attr(rx, ry)}"/>')
    return out


def _view_box(xs, ys):
    xs = np.asarray(xs)[np.isfinite(xs)]
    ys = np.asarray(ys)[np.isfinite(ys)]
    lo_x, hi_x, lo_y, hi_y = xs.min(), xs.max(), ys.min(), ys.max()
    span = max(hi_x - lo_x, hi_y - lo_y, 1.0)
    pad = 0.05 * span
    return lo_x - pad, lo_y - pad, (hi_x - lo_x) + 2 * pad, (hi_y - lo_y) + 2 * pad


# ── Mesh ────────────────────────────────────────────────────────────────────

def mesh_panel(title, warped, horizon=None, partition=None):
    """One panel: mesh rows and columns plus optional horizon/partition polylines."""
    return {"title": title, "mesh": warped, "horizon": horizon, "partition": partition}


def _panel_svg(panel, x_offset):
    m = panel["mesh"]
    all_x = [m.image_x.ravel()]
    all_y = [m.image_y.ravel()]
    for key in ("horizon", "partition"):
        if panel[key] is not None:
            all_x.append(panel[key][0])
            all_y.append(panel[key][1])
    vx, vy, vw, vh = _view_box(np.concatenate(all_x), np.concatenate(all_y))

    lines = [
        f'<svg x="{x_offset}" y="{TITLE_HEIGHT}" width="{PANEL_SIZE}" height="{PANEL_SIZE}" '
        f'viewBox="{fmt(vx)} {fmt(vy)} {fmt(vw)} {fmt(vh)}">'
    ]
    for i in range(m.image_x.shape[0]):
        lines += _polyline("mesh", m.image_x[i], m.image_y[i])
    for j in range(m.image_x.shape[1]):
        lines += _polyline("mesh", m.image_x[:, j], m.image_y[:, j])
    if panel["horizon"] is not None:
        lines += _polyline("horizon", *panel["horizon"])
    if panel["partition"] is not None:
        lines += _polyline("partition", *panel["partition"])
    lines.append("</svg>")
    return lines


def mesh_svg(panels, caption=""):
    """Panels laid out left to right, each scaled into its own square viewport."""
    width = len(panels) * PANEL_SIZE + (len(panels) - 1) * PANEL_GAP
    height = PANEL_SIZE + TITLE_HEIGHT
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        SVG_STYLE,
    ]
    for k, panel in enumerate(panels):
        x_offset = k * (PANEL_SIZE + PANEL_GAP)
        lines.append(f'<text x="{x_offset}" y="20">{panel["title"]}{caption}</text>')
        lines += _panel_svg(panel, x_offset)
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def diagnose_mesh(H, x_star, x_range, y_range, steps, mode="quasi"):
    """Homography and quasi-homography meshes over one grid; returns (svg, info)."""
    nx, ny = int(steps[0]), int(steps[1])
    xs_nodes = np.linspace(x_range[0], x_range[1], nx)
    ys_nodes = np.linspace(y_range[0], y_range[1], ny)

    if mode == "homography":
        try:
            y_star = H.horizon_row()
        except AffineDegenerate:
            y_star = None
        warps = [("homography", H)]
    else:
        Q = build(H, x_star)
        y_star = Q.y_star
        warps = [("homography", H), ("quasi-homography", Q)]

    panels, info = [], {"x_star": None if mode == "homography" else x_star, "y_star": y_star}
    for title, warp in warps:
        warped = mesh(warp, x_range, y_range, steps)
        horizon = partition = None
        if y_star is not None:
            horizon = warp.forward_xy(xs_nodes, np.full(nx, y_star))
        if mode != "homography":
            partition = warp.forward_xy(np.full(ny, float(x_star)), ys_nodes)
        panels.append(mesh_panel(title, warped, horizon, partition))
        info[title] = warped.to_dict()

    caption = "" if y_star is None else f" (y* = {fmt(y_star)})"
    return mesh_svg(panels, caption), info


# ── Scale profile ───────────────────────────────────────────────────────────

def scale_table(H, x_star, xs):
    """f0(x, y*) and f-dagger(x, y*) over xs, plus a note when both coincide."""
    xs = np.asarray(xs, dtype=float)
    note = None
    try:
        Q = build(H, x_star)
        y_row = Q.y_star
        f_dagger = Q.scale_profile(xs)
    except AffineDegenerate:
        Q, y_row = None, 0.0
        note = "homography is affine along rows: the quasi-homography equals the homography"
    except NonMonotoneScale as e:
        Q, y_row = None, H.horizon_row()
        note = f"no quasi-homography: {e}"
    f0, _ = H.apply_xy(xs, np.full_like(xs, y_row))
    if Q is None or abs(H.h[6]) <= H.tolerance:
        if note is None:
            note = "h7 = 0: f0 is already linear in x, the quasi-homography equals the homography"
        f_dagger = f0
    df = pd.DataFrame({"x": xs, "f0": f0, "f_dagger": f_dagger})
    return df, y_row, note


def write_table(df, path):
    """CSV with every float formatted by fmt()."""
    out = df.copy()
    for col in out.columns:
        if pd.api.types.is_float_dtype(out[col]) or pd.api.types.is_integer_dtype(out[col]):
            out[col] = [fmt(v) for v in out[col]]
    out.to_csv(path, index=False, lineterminator="\n")


def scale_svg(df, x_star):
    """Both profiles on one plot (f grows upward); x* marked by a vertical line."""
    xs = df["x"].to_numpy()
    f0 = df["f0"].to_numpy()
    fq = df["f_dagger"].to_numpy()
    vx, vy, vw, vh = _view_box(np.concatenate([xs, xs]), np.concatenate([-f0, -fq]))
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_SIZE}" height="{PANEL_SIZE}" '
        f'viewBox="{fmt(vx)} {fmt(vy)} {fmt(vw)} {fmt(vh)}">',
        SVG_STYLE,
    ]
    lines += _polyline("profile-h", xs, -f0)
    if not np.array_equal(f0, fq):
        lines += _polyline("profile-q", xs, -fq)
    if x_star is not None and xs.min() <= x_star <= xs.max():
        lines += _polyline("partition", [x_star, x_star], [vy, vy + vh])
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# ── Metrics ─────────────────────────────────────────────────────────────────

def _max_or_zero(values):
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    return float(values.max()) if values.size else 0.0


def metrics(warp, y_row, x_from, x_range, y_range, steps, samples):
    """Distortion measures of a warp.

    scale_nonlinearity  max |second difference| of f along the row y_row for x > x_from
    scale_spread        max/min local scale along that row, minus 1
    slope_deviation     max collinearity residual of mapped mesh rows and columns
    diagonal_deviation  same for mapped mesh diagonals
    fold_count          mesh cells with flipped or collapsed orientation
    """
    xs = np.linspace(x_range[0], x_range[1], samples)
    xs = xs[xs > x_from]
    fx, _ = warp.forward_xy(xs, np.full_like(xs, y_row))
    second = np.abs(fx[2:] - 2 * fx[1:-1] + fx[:-2]) if len(xs) >= 3 else np.array([])
    slopes = np.diff(fx) / np.diff(xs) if len(xs) >= 2 else np.array([])
    slopes = slopes[np.isfinite(slopes)]
    spread = float(slopes.max() / slopes.min() - 1.0) if slopes.size and slopes.min() > 0 else 0.0

    m = mesh(warp, x_range, y_range, steps)
    X, Y = m.image_x, m.image_y
    rows = collinearity_residual((X[:, :-2], Y[:, :-2]), (X[:, 1:-1], Y[:, 1:-1]), (X[:, 2:], Y[:, 2:]))
    cols = collinearity_residual((X[:-2], Y[:-2]), (X[1:-1], Y[1:-1]), (X[2:], Y[2:]))
    diag = collinearity_residual(
        (X[:-2, :-2], Y[:-2, :-2]), (X[1:-1, 1:-1], Y[1:-1, 1:-1]), (X[2:, 2:], Y[2:, 2:])
    )
    return {
        "warp": warp.kind,
        "scale_nonlinearity": clean(_max_or_zero(second)),
        "scale_spread": clean(spread),
        "slope_deviation": clean(max(_max_or_zero(rows), _max_or_zero(cols))),
        "diagonal_deviation": clean(_max_or_zero(diag)),
        "fold_count": m.fold_count(),
    }


def compare_metrics(H, x_star, x_range, y_range, steps, samples, modes=("homography", "quasi")):
    """Metrics for the homography and (when it exists) its quasi-homography on one sampling."""
    try:
        y_row = H.horizon_row()
    except AffineDegenerate:
        y_row = 0.0
    out = {"x_star": x_star, "y_star": y_row}
    for mode in modes:
        if mode == "homography":
            out["homography"] = metrics(H, y_row, x_star, x_range, y_range, steps, samples)
            continue
        try:
            Q = build(H, x_star)
        except (AffineDegenerate, NonMonotoneScale) as e:
            out["quasi"] = None
            out["note"] = f"no quasi-homography: {e}"
            continue
        out["quasi"] = metrics(Q, y_row, x_star, x_range, y_range, steps, samples)
    return out
