"""
Quasi-homography warp.

Left of the partition column x* the warp is the base homography. Right of it,
each point is the intersection of the mapped horizontal line through it and
the mapped vertical line through it, with the vertical line pinned to the
horizon row by a linearised (first-order) version of the homography's scale.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from src import config
from src.errors import (
    DegeneratePoint,
    InputInvalid,
    NoAdmissibleRoot,
    NonMonotoneScale,
    OutsideImage,
    ParallelConstraintLines,
)
from src.geometry import Homography, Point

logger = logging.getLogger(__name__)

# backward() status codes for vectorised evaluation
STATUS_OK = 0
STATUS_VANISHING = 1
STATUS_NO_ROOT = 2
STATUS_OUTSIDE = 3


def _intersect_lines(ax, ay, adx, ady, bx, by, bdx, bdy, tol):
    """Per-point 2x2 solve of a + s*da = b + t*db; NaN where the lines are parallel."""
    den = adx * bdy - ady * bdx
    scale = np.hypot(adx, ady) * np.hypot(bdx, bdy)
    parallel = np.abs(den) <= tol * scale
    den = np.where(parallel, np.nan, den)
    s = ((bx - ax) * bdy - (by - ay) * bdx) / den
    return ax + s * adx, ay + s * ady


def pick_root(r1, r2, res1, res2, tol):
    """Choose, per point, the admissible root that reproduces q best.

    A root is admissible when its forward residual is within tol. When both
    are, the smaller residual wins; ties go to r1. Returns (x, residual, good).
    """
    g1, g2 = res1 <= tol, res2 <= tol
    first = g1 & (~g2 | (res1 <= res2))
    x = np.where(first, r1, np.where(g2, r2, np.nan))
    return x, np.fmin(res1, res2), g1 | g2


# ── Quasi-homography ────────────────────────────────────────────────────────

@dataclass(frozen=True)
class QuasiHomography:
    base: Homography
    x_star: float
    y_star: float
    f_at_anchor: float
    df_at_anchor: float
    g_on_horizon: float

    kind = "quasi"

    @property
    def tolerance(self):
        return self.base.tolerance

    def describe(self):
        return {
            "kind": self.kind,
            "h": list(self.base.h),
            "x_star": self.x_star,
            "y_star": self.y_star,
            "f_at_anchor": self.f_at_anchor,
            "df_at_anchor": self.df_at_anchor,
        }

    # Forward

    def linear_scale_xy(self, xs):
        """f*(x, y*): first-order expansion of f0 along the horizon row."""
        return self.f_at_anchor + self.df_at_anchor * (np.asarray(xs, dtype=float) - self.x_star)

    def _forward_q(self, xs, ys):
        """Right-of-partition branch; callers pass xs > x*."""
        H = self.base
        ax, ay = H.apply_xy(np.full_like(xs, self.x_star), ys)
        adx, ady = H.slope_h_xy(ys)
        bdx, bdy = H.slope_v_xy(xs)
        bx = self.linear_scale_xy(xs)
        by = np.full_like(xs, self.g_on_horizon)
        return _intersect_lines(ax, ay, adx, ady, bx, by, bdx, bdy, self.tolerance)

    def forward_xy(self, xs, ys):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        xs, ys = np.broadcast_arrays(xs, ys)
        out_x, out_y = self.base.apply_xy(xs, ys)
        right = xs > self.x_star
        if np.any(right):
            qx, qy = self._forward_q(xs[right], ys[right])
            out_x = out_x.copy()
            out_y = out_y.copy()
            out_x[right] = qx
            out_y[right] = qy
        return out_x, out_y

    def forward(self, p):
        if p.x <= self.x_star:
            return self.base.apply(p)
        xs, ys = np.array([p.x]), np.array([p.y])
        H = self.base
        if not np.isfinite(H.apply_xy(np.array([self.x_star]), ys)[0][0]):
            raise DegeneratePoint(f"row {p.y} meets the vanishing line at the partition column")
        qx, qy = self._forward_q(xs, ys)
        if not np.isfinite(qx[0]):
            raise ParallelConstraintLines(
                f"mapped horizontal and vertical lines through ({p.x}, {p.y}) are parallel"
            )
        return Point(float(qx[0]), float(qy[0]))

    # Backward

    def _quadratic_roots(self, qx, qy):
        """Both roots of m1 x^2 + m2 x + m3 = 0 for the right-branch x; NaN when absent."""
        h1, h2, h3, h4, h5, h6, h7, h8 = self.base.h
        c1, c0 = h1 * h8 - h2 * h7, h3 * h8 - h2
        e1, e0 = h4 * h8 - h5 * h7, h6 * h8 - h5
        b = self.df_at_anchor
        u = qx - self.f_at_anchor + b * self.x_star
        dy = qy - self.g_on_horizon

        m1 = np.full_like(qx, -b * e1)
        m2 = u * e1 - b * e0 - dy * c1
        m3 = u * e0 - dy * c0

        disc = m2 * m2 - 4.0 * m1 * m3
        scale = np.abs(m2) + np.abs(m1) * (np.abs(qx) + 1.0)
        linear = np.abs(m1) <= self.tolerance * np.where(scale > 0, scale, 1.0)

        with np.errstate(divide="ignore", invalid="ignore"):
            root = np.sqrt(np.where(disc >= 0, disc, np.nan))
            half = -0.5 * (m2 + np.copysign(root, m2))
            r1 = np.where(linear, -m3 / m2, half / m1)
            r2 = np.where(linear, np.nan, m3 / half)
        negative = (disc < 0) & ~linear
        return r1, r2, negative

    def backward_status_xy(self, qxs, qys):
        """Vectorised inverse with a per-point status code (see STATUS_*)."""
        qx = np.asarray(qxs, dtype=float)
        qy = np.asarray(qys, dtype=float)
        qx, qy = np.broadcast_arrays(qx, qy)
        hx, hy = self.base.backward_xy(qx, qy)

        out_x = hx.copy()
        out_y = hy.copy()
        status = np.where(np.isfinite(hx), STATUS_OK, STATUS_VANISHING).astype(np.int8)

        right = np.isfinite(hx) & (hx > self.x_star)
        if not np.any(right):
            return out_x, out_y, status

        rqx, rqy, ry = qx[right], qy[right], hy[right]
        r1, r2, negative = self._quadratic_roots(rqx, rqy)

        any_real = ~negative & (np.isfinite(r1) | np.isfinite(r2))
        tol = config.ROUND_TRIP_TOLERANCE_PX * np.maximum(1.0, np.hypot(rqx, rqy) * 1e-6)
        residuals = []
        for root in (r1, r2):
            ok = np.isfinite(root) & (root > self.x_star)
            res = np.full_like(rqx, np.inf)
            if np.any(ok):
                fx, fy = self._forward_q(np.where(ok, root, self.x_star + 1.0), ry)
                res = np.hypot(fx - rqx, fy - rqy)
                res = np.where(ok & np.isfinite(res), res, np.inf)
            residuals.append(res)

        best_x, best_res, good = pick_root(r1, r2, residuals[0], residuals[1], tol)
        sub_status = np.where(
            good, STATUS_OK,
            np.where(any_real & ~np.isfinite(best_res), STATUS_OUTSIDE, STATUS_NO_ROOT),
        ).astype(np.int8)

        out_x[right] = np.where(good, best_x, np.nan)
        out_y[right] = np.where(good, ry, np.nan)
        status[right] = sub_status
        return out_x, out_y, status

    def backward_xy(self, qxs, qys):
        x, y, _ = self.backward_status_xy(qxs, qys)
        return x, y

    def backward(self, q):
        xs, ys, status = self.backward_status_xy(np.array([q.x]), np.array([q.y]))
        code = int(status[0])
        if code == STATUS_VANISHING:
            raise DegeneratePoint(f"({q.x}, {q.y}) lies on the inverse vanishing line")
        if code == STATUS_OUTSIDE:
            raise OutsideImage(f"({q.x}, {q.y}) is not in the range of the warp")
        if code == STATUS_NO_ROOT:
            raise NoAdmissibleRoot(f"no admissible preimage for ({q.x}, {q.y})")
        return Point(float(xs[0]), float(ys[0]))

    # Diagnostics helpers

    def scale_profile(self, xs):
        """f-dagger along the horizon row: rational left of x*, linear right of it."""
        xs = np.asarray(xs, dtype=float)
        f0, _ = self.base.apply_xy(xs, np.full_like(xs, self.y_star))
        return np.where(xs <= self.x_star, f0, self.linear_scale_xy(xs))

    def mesh(self, x_range, y_range, steps):
        return mesh(self, x_range, y_range, steps)


def build(H0, x_star):
    """Construct the quasi-homography of H0 partitioned at column x_star."""
    if not math.isfinite(x_star):
        raise DegeneratePoint(f"partition column must be finite, got {x_star}")
    y_star = H0.horizon_row()
    xs, ys = np.array([x_star]), np.array([y_star])
    f_at, g_at = H0.apply_xy(xs, ys)
    if not np.isfinite(f_at[0]):
        raise DegeneratePoint(f"anchor ({x_star}, {y_star}) lies on the vanishing line")
    df = float(H0.df_dx_xy(xs, ys)[0])
    if not df > 0.0:
        raise NonMonotoneScale(f"scale derivative at the anchor is {df:.6g}; it must be positive")
    logger.debug("quasi-homography anchor x*=%.3f y*=%.3f f=%.6g df=%.6g", x_star, y_star, f_at[0], df)
    return QuasiHomography(
        base=H0,
        x_star=float(x_star),
        y_star=float(y_star),
        f_at_anchor=float(f_at[0]),
        df_at_anchor=df,
        g_on_horizon=float(g_at[0]),
    )


def forward(Q, p):
    return Q.forward(p)


def backward(Q, q):
    return Q.backward(q)


def scale_profile(Q, xs):
    return Q.scale_profile(xs)


def reformulated_apply(H, x_star, y_star, p):
    """Homography evaluated as the intersection of its two mapped mesh lines.

    Same system as the quasi branch, but the vertical line is pinned at the
    exact rational scale H(x, y*) instead of its linearisation.
    """
    xs, ys = np.array([p.x], dtype=float), np.array([p.y], dtype=float)
    ax, ay = H.apply_xy(np.array([x_star], dtype=float), ys)
    bx, by = H.apply_xy(xs, np.array([y_star], dtype=float))
    adx, ady = H.slope_h_xy(ys)
    bdx, bdy = H.slope_v_xy(xs)
    if not (np.isfinite(ax[0]) and np.isfinite(bx[0])):
        raise DegeneratePoint(f"({p.x}, {p.y}) meets the vanishing line")
    x, y = _intersect_lines(ax, ay, adx, ady, bx, by, bdx, bdy, H.tolerance)
    if not np.isfinite(x[0]):
        raise ParallelConstraintLines(f"mesh lines through ({p.x}, {p.y}) are parallel")
    return Point(float(x[0]), float(y[0]))


# ── Mirrored warp ───────────────────────────────────────────────────────────

class MirroredWarp:
    """Wrap a warp built for a right-hand target so it serves a left-hand one.

    Both frames are reflected by x -> -x around the inner warp.
    """

    def __init__(self, inner):
        self.inner = inner

    @property
    def kind(self):
        return f"mirrored-{self.inner.kind}"

    def describe(self):
        return {"kind": self.kind, "inner": self.inner.describe()}

    def forward_xy(self, xs, ys):
        x, y = self.inner.forward_xy(-np.asarray(xs, dtype=float), ys)
        return -x, y

    def backward_xy(self, xs, ys):
        x, y = self.inner.backward_xy(-np.asarray(xs, dtype=float), ys)
        return -x, y

    def forward(self, p):
        r = self.inner.forward(Point(-p.x, p.y))
        return Point(-r.x, r.y)

    def backward(self, p):
        r = self.inner.backward(Point(-p.x, p.y))
        return Point(-r.x, r.y)


# ── Mesh sampling ───────────────────────────────────────────────────────────

@dataclass
class WarpedMesh:
    grid_x: np.ndarray
    grid_y: np.ndarray
    image_x: np.ndarray
    image_y: np.ndarray
    orientation: np.ndarray

    @property
    def shape(self):
        return self.grid_x.shape

    @property
    def valid(self):
        return np.isfinite(self.image_x) & np.isfinite(self.image_y)

    def fold_count(self):
        """Cells whose orientation disagrees with the majority (degenerate cells count)."""
        signs = self.orientation[self.orientation != 0]
        pos = int(np.count_nonzero(signs > 0))
        neg = int(np.count_nonzero(signs < 0))
        cells = self._valid_cells()
        degenerate = int(np.count_nonzero(cells & (self.orientation == 0)))
        return min(pos, neg) + degenerate

    def _valid_cells(self):
        v = self.valid
        return v[:-1, :-1] & v[1:, :-1] & v[:-1, 1:] & v[1:, 1:]

    def to_points(self):
        """Nested [row][col] = [x, y] lists; invalid nodes are None."""
        rows = []
        for i in range(self.image_x.shape[0]):
            row = []
            for j in range(self.image_x.shape[1]):
                x, y = self.image_x[i, j], self.image_y[i, j]
                row.append([float(x), float(y)] if np.isfinite(x) and np.isfinite(y) else None)
            rows.append(row)
        return rows

    def to_dict(self):
        return {
            "x_nodes": [float(v) for v in self.grid_x[0]],
            "y_nodes": [float(v) for v in self.grid_y[:, 0]],
            "points": self.to_points(),
            "folds": self.fold_count(),
        }


def mesh(warp, x_range, y_range, steps):
    """Forward-map a regular (ny, nx) grid through any warp and record cell orientation."""
    nx, ny = int(steps[0]), int(steps[1])
    if nx < 2 or ny < 2:
        raise InputInvalid("mesh needs at least two nodes per axis")
    gx, gy = np.meshgrid(
        np.linspace(x_range[0], x_range[1], nx),
        np.linspace(y_range[0], y_range[1], ny),
    )
    ix, iy = warp.forward_xy(gx, gy)

    ux, uy = ix[:-1, 1:] - ix[:-1, :-1], iy[:-1, 1:] - iy[:-1, :-1]
    vx, vy = ix[1:, :-1] - ix[:-1, :-1], iy[1:, :-1] - iy[:-1, :-1]
    cross = ux * vy - uy * vx
    orientation = np.where(np.isfinite(cross), np.sign(cross), 0).astype(np.int8)
    return WarpedMesh(gx, gy, ix, iy, orientation)
