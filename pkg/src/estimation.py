"""
Homography estimation from correspondences.

Normalised DLT, seeded RANSAC around it, the boundary-vertical constrained fit,
the seam-driven choice of partition column, a small Harris/NCC matcher and
correspondence file I/O.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg as la
from skimage.feature import corner_harris, peak_local_max

from src import config
from src.errors import (
    ConstraintInfeasible,
    DegenerateConfiguration,
    EmptySeam,
    IllConditioned,
    InputInvalid,
    InputMissing,
    NoConsensus,
    TooFewFeatures,
)
from src.geometry import Homography, Point

logger = logging.getLogger(__name__)

TARGET_TO_REFERENCE = "target_to_reference"
REFERENCE_TO_TARGET = "reference_to_target"
ORDERS = (TARGET_TO_REFERENCE, REFERENCE_TO_TARGET)


# ── Correspondences ─────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Correspondence:
    source: Point
    dest: Point
    weight: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.weight) and self.weight >= 0):
            raise InputInvalid(f"correspondence weight must be finite and >= 0, got {self.weight}")


@dataclass
class CorrespondenceSet:
    """Matched points, target (source) to reference (dest)."""

    items: list = field(default_factory=list)
    inlier_mask: list | None = None

    def __post_init__(self):
        if self.inlier_mask is not None and len(self.inlier_mask) != len(self.items):
            raise InputInvalid(
                f"inlier mask has {len(self.inlier_mask)} entries for {len(self.items)} correspondences"
            )

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @classmethod
    def from_arrays(cls, src, dst, weights=None):
        src = np.asarray(src, dtype=float).reshape(-1, 2)
        dst = np.asarray(dst, dtype=float).reshape(-1, 2)
        if src.shape != dst.shape:
            raise InputInvalid(f"{len(src)} source points but {len(dst)} destination points")
        w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=float)
        return cls([
            Correspondence(Point(float(s[0]), float(s[1])), Point(float(d[0]), float(d[1])), float(wi))
            for s, d, wi in zip(src, dst, w)
        ])

    @property
    def src(self):
        return np.array([[c.source.x, c.source.y] for c in self.items], dtype=float).reshape(-1, 2)

    @property
    def dst(self):
        return np.array([[c.dest.x, c.dest.y] for c in self.items], dtype=float).reshape(-1, 2)

    @property
    def weights(self):
        return np.array([c.weight for c in self.items], dtype=float)

    def subset(self, mask):
        mask = np.asarray(mask, dtype=bool)
        return CorrespondenceSet([c for c, keep in zip(self.items, mask) if keep])

    def with_mask(self, mask):
        return CorrespondenceSet(list(self.items), [bool(m) for m in mask])

    def inliers(self):
        if self.inlier_mask is None:
            return self
        return self.subset(self.inlier_mask)

    def reversed(self):
        """Swap source and destination (reference to target)."""
        return CorrespondenceSet(
            [Correspondence(c.dest, c.source, c.weight) for c in self.items],
            None if self.inlier_mask is None else list(self.inlier_mask),
        )


def load_jsonl(path):
    """Read a JSON-lines correspondence file.

    The first line is a header naming the order, e.g. {"order": "target_to_reference"};
    each following line is {"sx":, "sy":, "dx":, "dy":, "w": optional}.
    """
    if not os.path.exists(path):
        raise InputMissing(f"correspondence file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.strip() for line in f if line.strip()]
    if not lines:
        raise InputInvalid(f"{path} is empty")
    try:
        rows = [json.loads(line) for line in lines]
    except json.JSONDecodeError as e:
        raise InputInvalid(f"{path} is not valid JSON lines: {e}")

    header = rows[0]
    order = header.get("order") if isinstance(header, dict) else None
    if order not in ORDERS:
        raise InputInvalid(
            f"{path}: first line must be a header {{\"order\": ...}} with one of {', '.join(ORDERS)}"
        )
    items = []
    for n, row in enumerate(rows[1:], start=2):
        try:
            items.append(Correspondence(
                Point(float(row["sx"]), float(row["sy"])),
                Point(float(row["dx"]), float(row["dy"])),
                float(row.get("w", 1.0)),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise InputInvalid(f"{path}:{n}: bad correspondence row ({e})")
    corrs = CorrespondenceSet(items)
    return corrs.reversed() if order == REFERENCE_TO_TARGET else corrs


def save_jsonl(corrs, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"order": TARGET_TO_REFERENCE}) + "\n")
        for c in corrs:
            f.write(json.dumps({
                "sx": c.source.x, "sy": c.source.y, "dx": c.dest.x, "dy": c.dest.y, "w": c.weight,
            }) + "\n")


def _read_xy_csv(path):
    if not os.path.exists(path):
        raise InputMissing(f"point file not found: {path}")
    df = pd.read_csv(path, header=None, comment="#", skipinitialspace=True)
    df = df.apply(pd.to_numeric, errors="coerce")
    # tolerate a single header row such as "x,y"
    if len(df) and df.iloc[0].isna().all():
        df = df.iloc[1:]
    if df.shape[1] != 2 or df.isna().any().any():
        raise InputInvalid(f"{path}: expected two numeric columns x,y per line")
    return df.to_numpy(dtype=float)


def load_csv_pair(target_path, reference_path):
    """Row-aligned x,y files for the target and reference images."""
    src = _read_xy_csv(target_path)
    dst = _read_xy_csv(reference_path)
    if len(src) != len(dst):
        raise InputInvalid(f"{target_path} has {len(src)} rows but {reference_path} has {len(dst)}")
    return CorrespondenceSet.from_arrays(src, dst)


# ── DLT ─────────────────────────────────────────────────────────────────────

def hartley_normalization(pts):
    """Similarity moving the centroid to 0 and the mean distance to sqrt(2)."""
    pts = np.asarray(pts, dtype=float)
    c = pts.mean(axis=0)
    d = np.mean(np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1]))
    if d < 1e-12:
        raise DegenerateConfiguration("points are coincident")
    s = math.sqrt(2.0) / d
    T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return (pts - c) * s, T


def design_matrix(src, dst, weights=None):
    """Rows a_i of the algebraic system A h = 0 (two per correspondence)."""
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    zero, one = np.zeros_like(x), np.ones_like(x)
    rows_u = np.stack([x, y, one, zero, zero, zero, -u * x, -u * y, -u], axis=-1)
    rows_v = np.stack([zero, zero, zero, x, y, one, -v * x, -v * y, -v], axis=-1)
    if weights is not None:
        sw = np.sqrt(weights)[:, None]
        rows_u, rows_v = rows_u * sw, rows_v * sw
    return np.concatenate([rows_u, rows_v], axis=0)


def _collinear_triples(pts, tol=1e-9):
    """True when any three of the given points are collinear (relative to their spread)."""
    n = len(pts)
    spread = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-300)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                a, b = pts[j] - pts[i], pts[k] - pts[i]
                if abs(a[0] * b[1] - a[1] * b[0]) <= tol * spread * spread:
                    return True
    return False


def dlt(corrs, normalize=True):
    """Direct linear transform minimising the algebraic error with ||h|| = 1."""
    n = len(corrs)
    if n < 4:
        raise DegenerateConfiguration(f"a homography needs at least 4 correspondences, got {n}")
    src, dst, w = corrs.src, corrs.dst, corrs.weights
    if len(np.unique(src, axis=0)) < 4 or len(np.unique(dst, axis=0)) < 4:
        raise DegenerateConfiguration("fewer than four distinct points")
    if n == 4 and (_collinear_triples(src) or _collinear_triples(dst)):
        raise DegenerateConfiguration("three of the four points are collinear")

    if normalize:
        src_n, T_src = hartley_normalization(src)
        dst_n, T_dst = hartley_normalization(dst)
    else:
        src_n, dst_n, T_src, T_dst = src, dst, np.eye(3), np.eye(3)

    A = design_matrix(src_n, dst_n, w)
    _, s, Vt = np.linalg.svd(A)
    if s[7] <= config.TOLERANCE * s[0]:
        raise IllConditioned(f"singular-value gap {s[7] / s[0]:.3e} below tolerance")
    Hn = Vt[-1].reshape(3, 3)
    return Homography.from_matrix(np.linalg.inv(T_dst) @ Hn @ T_src)


def algebraic_cost(H, corrs):
    """sum ||a_i h||^2 in pixel coordinates with h scaled to unit norm."""
    h = H.matrix.ravel()
    h = h / np.linalg.norm(h)
    A = design_matrix(corrs.src, corrs.dst, corrs.weights)
    return float(np.sum((A @ h) ** 2))


def transfer_errors(H, src, dst):
    """Squared symmetric transfer error per correspondence (inf on the vanishing line)."""
    fx, fy = H.forward_xy(src[:, 0], src[:, 1])
    bx, by = H.backward_xy(dst[:, 0], dst[:, 1])
    err = (fx - dst[:, 0]) ** 2 + (fy - dst[:, 1]) ** 2 + (bx - src[:, 0]) ** 2 + (by - src[:, 1]) ** 2
    return np.where(np.isfinite(err), err, np.inf)


# ── RANSAC ──────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class RansacParams:
    inlier_threshold_px: float = config.RANSAC_THRESHOLD_PX
    max_iterations: int = config.RANSAC_MAX_ITERATIONS
    confidence: float = config.RANSAC_CONFIDENCE
    seed: int = config.RANSAC_SEED
    min_inliers: int = config.RANSAC_MIN_INLIERS

    def __post_init__(self):
        if not self.inlier_threshold_px > 0:
            raise InputInvalid("RANSAC inlier threshold must be > 0")
        if self.max_iterations < 1:
            raise InputInvalid("RANSAC needs at least one iteration")
        if not 0.0 < self.confidence < 1.0:
            raise InputInvalid("RANSAC confidence must lie in (0, 1)")

    @classmethod
    def from_config(cls, cfg):
        return cls(
            inlier_threshold_px=cfg.ransac_threshold,
            max_iterations=cfg.ransac_iterations,
            confidence=cfg.ransac_confidence,
            seed=cfg.seed,
            min_inliers=cfg.ransac_min_inliers,
        )


def required_iterations(inlier_ratio, confidence, cap):
    """Hypotheses needed to draw one all-inlier minimal sample with the given confidence."""
    p = inlier_ratio ** 4
    if p <= 0.0:
        return cap
    if p >= 1.0:
        return 1
    denom = math.log1p(-p)
    if denom == 0.0:
        return cap
    return min(cap, max(1, int(math.ceil(math.log(1.0 - confidence) / denom))))


def _batch_hypotheses(src_n, dst_n, samples):
    """Minimal-sample DLT for a batch of index quadruples; returns (B, 3, 3) and a usable mask."""
    s = src_n[samples]
    d = dst_n[samples]
    B = len(samples)
    x, y, u, v = s[..., 0], s[..., 1], d[..., 0], d[..., 1]
    zero, one = np.zeros_like(x), np.ones_like(x)
    rows_u = np.stack([x, y, one, zero, zero, zero, -u * x, -u * y, -u], axis=-1)
    rows_v = np.stack([zero, zero, zero, x, y, one, -v * x, -v * y, -v], axis=-1)
    A = np.concatenate([rows_u, rows_v], axis=1)
    _, sv, Vt = np.linalg.svd(A)
    Hn = Vt[:, -1, :].reshape(B, 3, 3)

    usable = sv[:, 7] > 1e-9 * sv[:, 0]
    for pts in (s, d):
        for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
            a, b = pts[:, j] - pts[:, i], pts[:, k] - pts[:, i]
            usable &= np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]) > 1e-6
    return Hn, usable


def ransac(corrs, params=None):
    """Seeded RANSAC over the normalised DLT; returns (Homography, inlier mask).

    Four points suffice to fit a hypothesis, but a model is only accepted with
    at least max(4, params.min_inliers) inliers (config.RANSAC_MIN_INLIERS = 8
    by default); smaller consensus sets raise NoConsensus.
    """
    params = params or RansacParams()
    n = len(corrs)
    if n < 4:
        raise DegenerateConfiguration(f"RANSAC needs at least 4 correspondences, got {n}")
    src, dst = corrs.src, corrs.dst
    src_n, T_src = hartley_normalization(src)
    dst_n, T_dst = hartley_normalization(dst)
    T_dst_inv = np.linalg.inv(T_dst)
    src_h = np.vstack([src.T, np.ones(n)])
    dst_h = np.vstack([dst.T, np.ones(n)])
    thr2 = params.inlier_threshold_px ** 2

    rng = np.random.default_rng(params.seed)
    best_count, best_mask = 0, None
    done, needed = 0, params.max_iterations
    while done < needed:
        batch = min(config.RANSAC_BATCH, needed - done)
        samples = np.array([rng.choice(n, 4, replace=False) for _ in range(batch)])
        done += batch

        Hn, usable = _batch_hypotheses(src_n, dst_n, samples)
        Hs = T_dst_inv @ Hn @ T_src
        h33 = Hs[:, 2, 2]
        norms = np.linalg.norm(Hs, axis=(1, 2))
        usable &= np.abs(h33) > config.TOLERANCE * norms
        if not np.any(usable):
            continue
        Hs = Hs[usable] / h33[usable, None, None]
        dets = np.linalg.det(Hs)
        keep = np.abs(dets) > config.TOLERANCE * np.linalg.norm(Hs, axis=(1, 2)) ** 3
        if not np.any(keep):
            continue
        Hs = Hs[keep]

        fwd = Hs @ src_h
        bwd = np.linalg.inv(Hs) @ dst_h
        with np.errstate(divide="ignore", invalid="ignore"):
            e1 = np.sum((fwd[:, :2] / fwd[:, 2:3] - dst.T) ** 2, axis=1)
            e2 = np.sum((bwd[:, :2] / bwd[:, 2:3] - src.T) ** 2, axis=1)
        err = np.where(np.isfinite(e1 + e2), e1 + e2, np.inf)
        inliers = err < thr2
        counts = inliers.sum(axis=1)
        top = int(np.argmax(counts))
        if counts[top] > best_count:
            best_count, best_mask = int(counts[top]), inliers[top]
            needed = max(done, required_iterations(best_count / n, params.confidence, params.max_iterations))

    min_count = max(4, params.min_inliers)
    if best_mask is None or best_count < min_count:
        raise NoConsensus(f"best hypothesis has {best_count} inliers, need {min_count}")

    H = dlt(corrs.subset(best_mask))
    refit_mask = transfer_errors(H, src, dst) < thr2
    if refit_mask.sum() >= best_count and not np.array_equal(refit_mask, best_mask):
        H = dlt(corrs.subset(refit_mask))
        best_mask = refit_mask
    logger.info("ransac: %d/%d inliers after %d hypotheses", int(best_mask.sum()), n, done)
    return H, best_mask


# ── Constrained estimation ──────────────────────────────────────────────────

def _constraint_ratio(h, w, tol):
    """c such that h8 = c * h2 keeps column x = w vertical."""
    lead = h[0] * w + h[2]
    if abs(lead) <= tol * np.linalg.norm(h) * (abs(w) + 1.0):
        raise ConstraintInfeasible("h1*w + h3 vanishes: the boundary column cannot be kept vertical")
    return (h[6] * w + h[8]) / lead


def estimate_rectified(corrs, width, height, params=None, boundary_x=None):
    """Homography whose image of the outer boundary column x = boundary_x is vertical.

    Fitted on RANSAC inliers by projected alternation: fix c from the current
    estimate, substitute h8 = c * h2 and solve the reduced unit-norm problem as a
    generalised symmetric eigenproblem, until c stops moving.
    """
    w = float(width if boundary_x is None else boundary_x)
    _, mask = ransac(corrs, params)
    inl = corrs.subset(mask)
    src, dst, weights = inl.src, inl.dst, inl.weights

    src_n, T_src = hartley_normalization(src)
    dst_n, T_dst = hartley_normalization(dst)
    w_n = T_src[0, 0] * w + T_src[0, 2]
    A = design_matrix(src_n, dst_n, weights)
    AtA = A.T @ A

    _, _, Vt = np.linalg.svd(A)
    h = Vt[-1]
    c = _constraint_ratio(h, w_n, config.TOLERANCE)
    for iteration in range(config.RECTIFY_MAX_ITERATIONS):
        B = np.zeros((9, 8))
        for i in range(7):
            B[i, i] = 1.0
        B[7, 1] = c
        B[8, 7] = 1.0
        vals, vecs = la.eigh(B.T @ AtA @ B, B.T @ B)
        h = B @ vecs[:, 0]
        h = h / np.linalg.norm(h)
        c_next = _constraint_ratio(h, w_n, config.TOLERANCE)
        if abs(c_next - c) <= config.RECTIFY_TOLERANCE * max(1.0, abs(c)):
            c = c_next
            break
        c = c_next
    else:
        logger.warning("rectified fit stopped after %d iterations", config.RECTIFY_MAX_ITERATIONS)
    logger.debug("rectified fit converged after %d iterations (c=%.6g)", iteration + 1, c)

    m = np.linalg.inv(T_dst) @ h.reshape(3, 3) @ T_src
    H = Homography.from_matrix(m)
    h1, h2, h3, h4, h5, h6, h7, _ = H.h
    lead = h1 * w + h3
    if abs(lead) <= config.TOLERANCE * (abs(h1) * (abs(w) + 1.0) + abs(h3)):
        raise ConstraintInfeasible("h1*w + h3 vanishes after denormalisation")
    h8 = h2 * (h7 * w + 1.0) / lead
    return Homography((h1, h2, h3, h4, h5, h6, h7, h8))


def boundary_violation(H, x, height):
    """|f0(x, 0) - f0(x, height)|: how far the column x = boundary strays from vertical."""
    fx, _ = H.apply_xy(np.array([x, x], dtype=float), np.array([0.0, float(height)]))
    return float(abs(fx[0] - fx[1]))


# ── Partition refinement ────────────────────────────────────────────────────

def refine_partition(seam_columns, overlap_max_x):
    """Partition column just outside the seam, toward the non-overlapping side."""
    cols = [int(c) for c in seam_columns]
    if not cols:
        raise EmptySeam("no seam columns to refine the partition from")
    lo, hi = min(cols), max(cols)
    return float(min(max(hi + 1, lo), overlap_max_x + 1))


# ── Built-in matcher ────────────────────────────────────────────────────────

@dataclass(frozen=True)
class MatchOptions:
    sigma: float = config.HARRIS_SIGMA
    min_distance: int = config.HARRIS_MIN_DISTANCE
    patch_radius: int = config.PATCH_RADIUS
    ratio: float = config.MATCH_RATIO
    min_ncc: float = config.MATCH_MIN_NCC
    max_keypoints: int = 800
    threshold_rel: float = 0.01


def _keypoints(gray, opts):
    response = corner_harris(gray, method="eps", sigma=opts.sigma)
    if not np.any(response > 0):
        return np.empty((0, 2), dtype=int)
    return peak_local_max(
        response,
        min_distance=opts.min_distance,
        threshold_rel=opts.threshold_rel,
        exclude_border=opts.patch_radius + 1,
        num_peaks=opts.max_keypoints,
    )


def _descriptors(gray, coords, r):
    """Zero-mean unit-norm square patches; flat patches are dropped."""
    if len(coords) == 0:
        return coords, np.empty((0, (2 * r + 1) ** 2))
    patches = np.stack([gray[i - r:i + r + 1, j - r:j + r + 1].ravel() for i, j in coords])
    patches = patches - patches.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(patches, axis=1)
    keep = norms > 1e-8
    return coords[keep], patches[keep] / norms[keep, None]


def detect_and_match(img_a, img_b, options=None):
    """Harris corners matched by patch NCC with a ratio test and mutual check.

    img_a is the target, img_b the reference.
    """
    opts = options or MatchOptions()
    gray_a, gray_b = img_a.gray(), img_b.gray()
    ka, da = _descriptors(gray_a, _keypoints(gray_a, opts), opts.patch_radius)
    kb, db = _descriptors(gray_b, _keypoints(gray_b, opts), opts.patch_radius)
    logger.debug("matcher: %d / %d keypoints", len(ka), len(kb))
    if len(ka) < 4 or len(kb) < 4:
        raise TooFewFeatures(f"only {len(ka)} and {len(kb)} usable corners")

    ncc = da @ db.T
    dist = np.sqrt(np.maximum(0.0, 2.0 - 2.0 * ncc))
    order = np.argsort(dist, axis=1)
    best, second = order[:, 0], order[:, 1]
    rows = np.arange(len(ka))
    d1, d2 = dist[rows, best], dist[rows, second]
    back = np.argmin(dist, axis=0)
    keep = (d1 < opts.ratio * d2) & (ncc[rows, best] >= opts.min_ncc) & (back[best] == rows)

    src = ka[keep][:, ::-1].astype(float)
    dst = kb[best[keep]][:, ::-1].astype(float)
    if len(src) < 4:
        raise TooFewFeatures(f"only {len(src)} matches survived the ratio test")
    logger.info("matcher: %d matches", len(src))
    return CorrespondenceSet.from_arrays(src, dst)
