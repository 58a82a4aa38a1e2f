"""
Two-image and multi-image stitching.

A pair is stitched in the frame where the target sits right of the reference;
a target on the left is handled by a mirrored warp. Sequences chain pairwise
warps toward the reference image.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from src import config
from src.compositing import (
    Raster,
    blend_layers,
    canvas_bounds_many,
    find_seam,
    place_reference,
    seam_cost,
    warp_image,
)
from src.errors import (
    AffineDegenerate,
    ChainBreak,
    InputInvalid,
    NoOverlap,
    NonMonotoneScale,
    PartitionInsideOverlap,
    StitchError,
)
from src.estimation import (
    RansacParams,
    detect_and_match,
    estimate_rectified,
    ransac,
    refine_partition,
    transfer_errors,
)
from src.quasiwarp import MirroredWarp, build

logger = logging.getLogger(__name__)


# ── Options ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class StitchOptions:
    rectify: bool = False
    refine_partition: bool = False
    ransac: RansacParams = field(default_factory=RansacParams)
    feather_px: int = config.FEATHER_PX
    fallback_to_homography: bool = True
    mode: str = "quasi"
    x_star: float | None = None
    canvas_cap: int = config.CANVAS_CAP_PX

    def __post_init__(self):
        if self.feather_px < 0:
            raise InputInvalid("feather_px must be >= 0")
        if self.mode not in ("quasi", "homography"):
            raise InputInvalid(f"mode must be 'quasi' or 'homography', got {self.mode!r}")

    @classmethod
    def from_config(cls, cfg):
        return cls(
            rectify=cfg.rectify,
            refine_partition=cfg.refine_partition,
            ransac=RansacParams.from_config(cfg),
            feather_px=cfg.feather_px,
            fallback_to_homography=cfg.fallback_to_homography,
            mode=cfg.mode,
            x_star=cfg.x_star,
            canvas_cap=cfg.canvas_cap,
        )


# ── Chained warps ───────────────────────────────────────────────────────────

class ChainedWarp:
    """Stages applied left to right; the inverse runs right to left."""

    kind = "chain"

    def __init__(self, stages):
        if not stages:
            raise InputInvalid("a chained warp needs at least one stage")
        self.stages = list(stages)

    def describe(self):
        return {"kind": self.kind, "stages": [s.describe() for s in self.stages]}

    def forward_xy(self, xs, ys):
        for stage in self.stages:
            xs, ys = stage.forward_xy(xs, ys)
        return xs, ys

    def backward_xy(self, xs, ys):
        for stage in reversed(self.stages):
            xs, ys = stage.backward_xy(xs, ys)
        return xs, ys

    def forward(self, p):
        for k, stage in enumerate(self.stages):
            try:
                p = stage.forward(p)
            except StitchError as e:
                raise e.with_index("stage", k) from e
        return p

    def backward(self, p):
        for k in range(len(self.stages) - 1, -1, -1):
            try:
                p = self.stages[k].backward(p)
            except StitchError as e:
                raise e.with_index("stage", k) from e
        return p


def compose_warps(chain, p):
    return chain.forward(p)


def compose_warps_inverse(chain, p):
    return chain.backward(p)


# ── Pairwise stage ──────────────────────────────────────────────────────────

def target_side(H, target_dims, ref_dims):
    """'right' when the target centre maps right of the reference centre."""
    tw, th = target_dims
    rw, _ = ref_dims
    cx, _ = H.forward_xy(np.array([(tw - 1) / 2.0]), np.array([(th - 1) / 2.0]))
    if not np.isfinite(cx[0]):
        raise NoOverlap("target centre maps onto the vanishing line")
    return "right" if cx[0] >= (rw - 1) / 2.0 else "left"


def overlap_max_x(H, target_dims, ref_dims, mirrored=False):
    """Largest target column (in the working frame) whose pixels land inside the reference."""
    tw, th = target_dims
    rw, rh = ref_dims
    gx, gy = np.meshgrid(np.arange(tw, dtype=float), np.arange(th, dtype=float))
    fx, fy = H.forward_xy(gx, gy)
    inside = np.isfinite(fx) & (fx >= 0) & (fx <= rw - 1) & (fy >= 0) & (fy <= rh - 1)
    if not inside.any():
        raise NoOverlap("no target pixel maps inside the reference")
    cols = gx[inside]
    return int(-cols.min()) if mirrored else int(cols.max())


@dataclass
class PairStage:
    """Estimated homography and the warp built from it for one adjacent pair."""

    H: object
    warp: object
    side: str
    inliers: int
    total: int
    rms: float
    overlap_max_x: int
    x_star: float | None = None
    y_star: float | None = None
    fallback: str | None = None

    def build_warp(self, x_star, opts):
        """(Re)build the warp for a partition column given in the working frame."""
        working = self.H.mirrored() if self.side == "left" else self.H
        self.fallback = None
        if opts.mode == "homography":
            self.warp, self.x_star, self.y_star = self.H, None, None
            return self.warp
        try:
            Q = build(working, x_star)
        except (AffineDegenerate, NonMonotoneScale) as e:
            if not opts.fallback_to_homography:
                raise
            logger.info("falling back to the plain homography: %s", e)
            self.warp, self.x_star, self.y_star = self.H, None, None
            self.fallback = f"{type(e).__name__}: {e}"
            return self.warp
        self.x_star, self.y_star = Q.x_star, Q.y_star
        self.warp = MirroredWarp(Q) if self.side == "left" else Q
        return self.warp

    def to_dict(self):
        return {
            "h": list(self.H.h),
            "side": self.side,
            "inliers": self.inliers,
            "total": self.total,
            "inlier_rms_px": self.rms,
            "overlap_max_x": self.overlap_max_x,
            "x_star": self.x_star,
            "y_star": self.y_star,
            "warp": self.warp.kind,
            "fallback": self.fallback,
        }


def estimate_stage(target, reference, corrs, opts):
    """Estimate H (target -> reference), pick the side and build the default warp."""
    if corrs is None or len(corrs) == 0:
        corrs = detect_and_match(target, reference)
    H, mask = ransac(corrs, opts.ransac)
    side = target_side(H, target.dims, reference.dims)
    if opts.rectify:
        boundary = target.width - 1 if side == "right" else 0
        H = estimate_rectified(corrs, target.width, target.height, opts.ransac, boundary_x=boundary)
        mask = transfer_errors(H, corrs.src, corrs.dst) < opts.ransac.inlier_threshold_px ** 2

    inl = corrs.subset(mask)
    err = transfer_errors(H, inl.src, inl.dst)
    fx, fy = H.forward_xy(inl.src[:, 0], inl.src[:, 1])
    rms = float(np.sqrt(np.mean((fx - inl.dst[:, 0]) ** 2 + (fy - inl.dst[:, 1]) ** 2))) if len(inl) else 0.0
    logger.debug("stage: symmetric transfer max %.3g px", float(np.sqrt(err.max())) if len(err) else 0.0)

    omx = overlap_max_x(H, target.dims, reference.dims, mirrored=(side == "left"))
    stage = PairStage(H, H, side, int(mask.sum()), len(corrs), rms, omx)
    x_star = opts.x_star if opts.x_star is not None else omx + 1
    stage.build_warp(float(x_star), opts)
    logger.info(
        "stage: %s target, %d/%d inliers, x*=%s, warp=%s",
        side, stage.inliers, stage.total, stage.x_star, stage.warp.kind,
    )
    return stage


# ── Compositing ─────────────────────────────────────────────────────────────

def _composite(reference, targets, opts, timings):
    """targets: list of (raster, warp); returns the Mosaic with labels 0 (reference), 1..n."""
    t0 = time.perf_counter()
    frame = canvas_bounds_many([(warp, img.dims) for img, warp in targets], reference.dims, opts.canvas_cap)
    ref_c = place_reference(reference, frame)
    layers = [ref_c]
    labels = np.where(ref_c.valid, 0, -1).astype(np.int16)
    current = Raster(ref_c.data.copy(), ref_c.valid.copy())
    timings["canvas"] = timings.get("canvas", 0.0) + time.perf_counter() - t0

    total_cost = 0.0
    for k, (img, warp) in enumerate(targets, start=1):
        t0 = time.perf_counter()
        warped = warp_image(warp, img.with_channels(reference.channels), frame)
        timings["warp"] = timings.get("warp", 0.0) + time.perf_counter() - t0

        t0 = time.perf_counter()
        overlap = current.valid & warped.valid
        if not overlap.any():
            raise NoOverlap(f"layer {k} does not overlap the mosaic so far")
        take_b = find_seam(current, warped, overlap)
        total_cost += seam_cost(current, warped, take_b, overlap)
        new = warped.valid & (~current.valid | take_b)
        labels[new] = k
        current.data[new] = warped.data[new]
        current.valid |= warped.valid
        layers.append(warped)
        timings["seam"] = timings.get("seam", 0.0) + time.perf_counter() - t0

    t0 = time.perf_counter()
    mosaic = blend_layers(layers, labels, frame, opts.feather_px)
    mosaic.seam_cost = total_cost
    timings["blend"] = timings.get("blend", 0.0) + time.perf_counter() - t0
    return mosaic


def _seam_columns(mosaic, stage):
    """Seam pixels mapped back into the target, as working-frame columns."""
    if not mosaic.seam:
        return []
    pts = np.array(mosaic.seam, dtype=float)
    xs = pts[:, 0] - mosaic.frame.origin.x
    ys = pts[:, 1] - mosaic.frame.origin.y
    sx, _ = stage.warp.backward_xy(xs, ys)
    sx = sx[np.isfinite(sx)]
    if stage.side == "left":
        sx = -sx
    # a seam pixel inside the overlap lands at most one column short of overlap_max_x + 1
    return np.minimum(np.floor(sx), stage.overlap_max_x).astype(int).tolist()


def _refine(reference, target, stage, mosaic, opts, timings):
    """Second pass: move x* just outside the provisional seam and recompose."""
    cols = _seam_columns(mosaic, stage)
    x_star = refine_partition(cols, stage.overlap_max_x)
    if x_star <= max(cols):
        raise PartitionInsideOverlap(
            f"refined partition {x_star} does not clear seam column {max(cols)}"
        )
    logger.info("refined partition: x* %s -> %s", stage.x_star, x_star)
    stage.build_warp(x_star, opts)
    return _composite(reference, [(target, stage.warp)], opts, timings)


def _report(opts, stages, mosaic, timings, cfg=None):
    return {
        "mode": opts.mode,
        "pairs": stages,
        "seam_cost": mosaic.seam_cost,
        "canvas": mosaic.frame.to_dict(),
        "timings_s": {k: round(v, 6) for k, v in timings.items()},
        "config": cfg if cfg is not None else {},
    }


def stitch_pair(target, reference, corrs, opts=None, cfg=None):
    """Estimate, warp, seam-cut and blend one target onto the reference."""
    opts = opts or StitchOptions()
    timings = {}
    t0 = time.perf_counter()
    stage = estimate_stage(target, reference, corrs, opts)
    timings["estimate"] = time.perf_counter() - t0

    mosaic = _composite(reference, [(target, stage.warp)], opts, timings)
    if opts.refine_partition and opts.x_star is None and stage.x_star is not None:
        mosaic = _refine(reference, target, stage, mosaic, opts, timings)

    timings["total"] = time.perf_counter() - t0
    entry = stage.to_dict()
    entry["pair"] = [0, 1]
    mosaic.report = _report(opts, [entry], mosaic, timings, cfg)
    return mosaic


def stitch_sequence(images, corrs_per_pair, ref_index=None, opts=None, cfg=None):
    """Chain adjacent pairs toward the reference and composite outward from it.

    corrs_per_pair[i] relates image i (source) to image i + 1 (destination).
    """
    opts = opts or StitchOptions()
    n = len(images)
    if n < 2:
        raise InputInvalid("a sequence needs at least two images")
    if len(corrs_per_pair) != n - 1:
        raise InputInvalid(f"{n} images need {n - 1} correspondence sets, got {len(corrs_per_pair)}")
    r = n // 2 if ref_index is None else ref_index
    if not 0 <= r < n:
        raise InputInvalid(f"reference index {r} out of range for {n} images")
    if opts.refine_partition:
        raise InputInvalid("partition refinement is only supported for stitch_pair")

    timings = {}
    t0 = time.perf_counter()
    stages = {}
    for i in range(n):
        if i == r:
            continue
        j = i + 1 if i < r else i - 1
        pair = min(i, j)
        corrs = corrs_per_pair[pair]
        if corrs is not None and i > r:
            corrs = corrs.reversed()
        try:
            stages[i] = estimate_stage(images[i], images[j], corrs, opts)
        except StitchError as e:
            raise ChainBreak(f"pair {pair}: {e}", pair=pair) from e
    timings["estimate"] = time.perf_counter() - t0

    def chain_for(i):
        step = 1 if i < r else -1
        return ChainedWarp([stages[k].warp for k in range(i, r, step)])

    order = list(range(r + 1, n)) + list(range(r - 1, -1, -1))
    mosaic = _composite(images[r], [(images[i], chain_for(i)) for i in order], opts, timings)
    timings["total"] = time.perf_counter() - t0

    entries = []
    for i in sorted(stages):
        entry = stages[i].to_dict()
        entry["pair"] = [i, i + 1 if i < r else i - 1]
        entry["label"] = order.index(i) + 1
        entries.append(entry)
    mosaic.report = _report(opts, entries, mosaic, timings, cfg)
    mosaic.report["reference_index"] = r
    return mosaic

