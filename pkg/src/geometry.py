"""
Exact homography math: application, inversion, mesh-slope fields and the
horizon row that a homography keeps horizontal.

Scalar operations raise the named errors; the ``*_xy`` variants work on
numpy arrays and mark failing points with NaN instead.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from src import config
from src.errors import (
    AffineDegenerate,
    DegeneratePoint,
    InputInvalid,
    SingularHomography,
)


# ── Value types ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InputInvalid(f"point coordinates must be finite, got ({self.x}, {self.y})")

    def as_tuple(self):
        return (self.x, self.y)


@dataclass(frozen=True)
class Direction:
    """Homogeneous slope: (dx, dy) stands for k = dy / dx, vertical when dx == 0."""

    dx: float
    dy: float

    def __post_init__(self):
        if self.dx == 0.0 and self.dy == 0.0:
            raise DegeneratePoint("direction (0, 0) is undefined")

    def cross(self, other):
        return self.dx * other.dy - self.dy * other.dx

    def norm(self):
        return math.hypot(self.dx, self.dy)

    def parallel_to(self, other, tol=1e-12):
        """True when both directions are scalar multiples of each other."""
        return abs(self.cross(other)) <= tol * self.norm() * other.norm()

    def is_horizontal(self, tol=1e-12):
        return abs(self.dy) <= tol * self.norm()

    def is_vertical(self, tol=1e-12):
        return abs(self.dx) <= tol * self.norm()

    @property
    def slope(self):
        return math.inf if self.dx == 0.0 else self.dy / self.dx


# ── Homography ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Homography:
    """Eight-parameter planar projective map with the constant term fixed to 1.

    f0(x, y) = (h1 x + h2 y + h3) / (h7 x + h8 y + 1)
    g0(x, y) = (h4 x + h5 y + h6) / (h7 x + h8 y + 1)
    """

    h: tuple
    tolerance: float = field(default=config.TOLERANCE, compare=False)

    kind = "homography"

    def __post_init__(self):
        h = tuple(float(v) for v in self.h)
        if len(h) != 8:
            raise InputInvalid(f"a homography needs eight parameters, got {len(h)}")
        if not all(math.isfinite(v) for v in h):
            raise InputInvalid("homography parameters must be finite")
        object.__setattr__(self, "h", h)
        m = self.matrix
        det = np.linalg.det(m)
        if abs(det) <= self.tolerance * np.linalg.norm(m) ** 3:
            raise SingularHomography(f"homography determinant {det:.3e} below tolerance")

    # Construction

    @classmethod
    def from_matrix(cls, m, tolerance=None):
        """Normalise a 3x3 matrix so its bottom-right entry is 1."""
        tol = config.TOLERANCE if tolerance is None else tolerance
        m = np.asarray(m, dtype=float)
        if m.shape != (3, 3):
            raise InputInvalid(f"homography matrix must be 3x3, got {m.shape}")
        if abs(m[2, 2]) <= tol * np.linalg.norm(m):
            raise SingularHomography("bottom-right entry vanishes: cannot normalise to h9 = 1")
        m = m / m[2, 2]
        return cls(tuple(m.ravel()[:8]), tolerance=tol)

    @classmethod
    def identity(cls):
        return cls((1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0))

    @classmethod
    def translation(cls, tx, ty):
        return cls((1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0))

    @classmethod
    def parse(cls, text):
        """Read nine whitespace-separated decimals, row-major."""
        try:
            values = [float(v) for v in text.split()]
        except ValueError as e:
            raise InputInvalid(f"homography text is not numeric: {e}")
        if len(values) != 9:
            raise InputInvalid(f"homography text needs nine numbers, got {len(values)}")
        return cls.from_matrix(np.array(values).reshape(3, 3))

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as f:
            return cls.parse(f.read())

    def to_text(self):
        m = self.matrix
        return "\n".join(" ".join(repr(float(v)) for v in row) for row in m) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())

    @cached_property
    def matrix(self):
        return np.array(self.h + (1.0,)).reshape(3, 3)

    def mirrored(self):
        """Conjugate by x -> -x in both frames."""
        h1, h2, h3, h4, h5, h6, h7, h8 = self.h
        return Homography((h1, -h2, -h3, -h4, h5, h6, -h7, h8), tolerance=self.tolerance)

    def describe(self):
        return {"kind": self.kind, "h": list(self.h)}

    @property
    def is_affine(self):
        h7, h8 = self.h[6], self.h[7]
        return abs(h7) <= self.tolerance and abs(h8) <= self.tolerance

    # Evaluation

    def denominator_xy(self, xs, ys):
        return self.h[6] * xs + self.h[7] * ys + 1.0

    def apply_xy(self, xs, ys):
        """Vectorised (f0, g0); NaN on the vanishing line."""
        h1, h2, h3, h4, h5, h6, h7, h8 = self.h
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        d = h7 * xs + h8 * ys + 1.0
        bad = np.abs(d) <= self.tolerance * (np.abs(h7 * xs) + np.abs(h8 * ys) + 1.0)
        d = np.where(bad, np.nan, d)
        return (h1 * xs + h2 * ys + h3) / d, (h4 * xs + h5 * ys + h6) / d

    def apply(self, p):
        xs, ys = self.apply_xy(np.array([p.x]), np.array([p.y]))
        if not (np.isfinite(xs[0]) and np.isfinite(ys[0])):
            raise DegeneratePoint(f"({p.x}, {p.y}) lies on the vanishing line")
        return Point(float(xs[0]), float(ys[0]))

    @cached_property
    def inverse(self):
        """Adjugate of the 3x3 matrix, renormalised."""
        m = self.matrix
        adj = np.array([np.cross(m[1], m[2]), np.cross(m[2], m[0]), np.cross(m[0], m[1])]).T
        if abs(adj[2, 2]) <= self.tolerance * np.linalg.norm(adj):
            raise SingularHomography("inverse cannot be normalised to h9 = 1")
        return Homography.from_matrix(adj, tolerance=self.tolerance)

    # Warp interface shared with the quasi-homography and chained warps
    def forward_xy(self, xs, ys):
        return self.apply_xy(xs, ys)

    def backward_xy(self, xs, ys):
        return self.inverse.apply_xy(xs, ys)

    def forward(self, p):
        return self.apply(p)

    def backward(self, p):
        return self.inverse.apply(p)

    # Mesh slopes

    def slope_h_xy(self, ys):
        """Direction field of mapped horizontal lines; independent of x."""
        h1, h2, h3, h4, h5, h6, h7, h8 = self.h
        ys = np.asarray(ys, dtype=float)
        dx = (h1 * h8 - h2 * h7) * ys + (h1 - h3 * h7)
        dy = (h4 * h8 - h5 * h7) * ys + (h4 - h6 * h7)
        return dx, dy

    def slope_v_xy(self, xs):
        """Direction field of mapped vertical lines; independent of y."""
        h1, h2, h3, h4, h5, h6, h7, h8 = self.h
        xs = np.asarray(xs, dtype=float)
        dx = (h1 * h8 - h2 * h7) * xs + (h3 * h8 - h2)
        dy = (h4 * h8 - h5 * h7) * xs + (h6 * h8 - h5)
        return dx, dy

    def slope_h(self, y):
        dx, dy = self.slope_h_xy(np.array([y]))
        return Direction(float(dx[0]), float(dy[0]))

    def slope_v(self, x):
        dx, dy = self.slope_v_xy(np.array([x]))
        return Direction(float(dx[0]), float(dy[0]))

    def df_dx_xy(self, xs, ys):
        """Analytic x-derivative of f0 (quotient rule)."""
        dx, _ = self.slope_h_xy(ys)
        d = self.denominator_xy(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float))
        return dx / (d * d)

    def horizon_row(self):
        """Row y* whose image stays horizontal."""
        h1, h2, h3, h4, h5, h6, h7, h8 = self.h
        den = h4 * h8 - h5 * h7
        if abs(den) <= self.tolerance * np.linalg.norm(self.matrix) ** 2:
            raise AffineDegenerate(
                "h4*h8 - h5*h7 vanishes: every horizontal line keeps its slope, no unique horizon row"
            )
        return (h6 * h7 - h4) / den


# ── Module-level operations ─────────────────────────────────────────────────

def apply(H, p):
    return H.apply(p)


def invert(H):
    return H.inverse


def slope_h(H, y):
    return H.slope_h(y)


def slope_v(H, x):
    return H.slope_v(x)


def horizon_row(H):
    return H.horizon_row()


def collinearity_residual(p1, p2, p3):
    """Sine of the angle at p1 between the chords to p2 and p3 (vectorised)."""
    ax, ay = p2[0] - p1[0], p2[1] - p1[1]
    bx, by = p3[0] - p1[0], p3[1] - p1[1]
    num = np.abs(ax * by - ay * bx)
    den = np.hypot(ax, ay) * np.hypot(bx, by)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
