"""
Canvas sizing, backward-warp resampling, seam cutting and label blending.

Pixel centres sit at integer coordinates. Canvas pixel (col, row) is the
reference-frame point (col - origin.x, row - origin.y).
"""

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import maxflow
import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.color import rgb2gray

from src import config
from src.errors import InputInvalid, InputMissing, LabelGap, NoOverlap, UnboundedWarp
from src.geometry import Point

logger = logging.getLogger(__name__)

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
RIGHT_EDGE = np.array([[0, 0, 0], [0, 0, 1], [0, 0, 0]])
DOWN_EDGE = np.array([[0, 0, 0], [0, 0, 0], [0, 1, 0]])


# ── Raster ──────────────────────────────────────────────────────────────────

@dataclass
class Raster:
    """Float image in [0, 1] of shape (height, width, channels) plus a validity mask."""

    data: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise InputInvalid(f"raster data must be (h, w, 1|3), got {data.shape}")
        self.data = data
        if self.valid is None:
            self.valid = np.ones(data.shape[:2], dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != data.shape[:2]:
            raise InputInvalid(f"mask shape {self.valid.shape} does not match raster {data.shape[:2]}")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    @property
    def dims(self):
        return (self.width, self.height)

    @classmethod
    def blank(cls, width, height, channels=3):
        return cls(np.zeros((height, width, channels)), np.zeros((height, width), dtype=bool))

    def gray(self):
        if self.channels == 1:
            return self.data[..., 0]
        return rgb2gray(self.data)

    def with_channels(self, channels):
        if channels == self.channels:
            return self
        if channels == 3:
            return Raster(np.repeat(self.data, 3, axis=2), self.valid.copy())
        return Raster(self.gray(), self.valid.copy())


def read_raster(path):
    """PNG or binary PPM/PGM via Pillow; an alpha channel becomes the validity mask."""
    if not os.path.exists(path):
        raise InputMissing(f"image not found: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            valid = None
            if im.mode in ("RGBA", "LA") or "transparency" in im.info:
                rgba = im.convert("RGBA")
                valid = np.asarray(rgba)[..., 3] > 0
                im = rgba.convert("RGB")
            elif im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=float) / 255.0
    except OSError as e:
        raise InputInvalid(f"cannot decode image {path}: {e}")
    return Raster(arr, valid)


def write_raster(raster, path):
    """Invalid pixels are written black; format follows the file extension."""
    data = np.clip(raster.data, 0.0, 1.0) * raster.valid[..., None]
    arr = np.round(data * 255.0).astype(np.uint8)
    arr = arr[..., 0] if raster.channels == 1 else arr
    Image.fromarray(arr).save(path)


def write_mask(mask, path):
    Image.fromarray((np.asarray(mask, dtype=bool) * 255).astype(np.uint8)).save(path)


def write_labels(labels, path):
    """Grayscale label image: empty = 0, label k = k + 1."""
    Image.fromarray((np.asarray(labels) + 1).astype(np.uint8)).save(path)


# ── Canvas ──────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class CanvasFrame:
    origin: Point
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InputInvalid(f"canvas must be at least 1x1, got {self.width}x{self.height}")

    def reference_grid(self, rows=None):
        """Reference-frame coordinates of the canvas pixels in the given rows."""
        rows = np.arange(self.height) if rows is None else np.asarray(rows)
        xs = np.arange(self.width, dtype=float) - self.origin.x
        ys = rows.astype(float) - self.origin.y
        return np.meshgrid(xs, ys)

    def to_dict(self):
        return {"origin": [self.origin.x, self.origin.y], "width": self.width, "height": self.height}


def boundary_samples(dims, samples=config.EDGE_SAMPLES):
    """Corners plus `samples` interior points per edge of a w x h pixel rectangle."""
    w, h = dims
    t = np.linspace(0.0, 1.0, samples + 2)
    xs_top = t * (w - 1)
    ys_side = t * (h - 1)
    bx = np.concatenate([xs_top, xs_top, np.zeros_like(ys_side), np.full_like(ys_side, w - 1)])
    by = np.concatenate([np.zeros_like(xs_top), np.full_like(xs_top, h - 1), ys_side, ys_side])
    return bx, by


def canvas_bounds_many(warped, ref_dims, cap=None):
    """Frame holding the reference rectangle and every (warp, dims) boundary image.

    With ref_dims None the frame covers the warped boundaries only.
    """
    cap = config.CANVAS_CAP_PX if cap is None else cap
    if ref_dims is None:
        lo_x = lo_y = math.inf
        hi_x = hi_y = -math.inf
    else:
        rw, rh = ref_dims
        lo_x, hi_x, lo_y, hi_y = 0.0, rw - 1.0, 0.0, rh - 1.0
    for warp, dims in warped:
        bx, by = boundary_samples(dims)
        fx, fy = warp.forward_xy(bx, by)
        if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(fy))):
            raise UnboundedWarp("target boundary crosses the vanishing line of the warp")
        lo_x, hi_x = min(lo_x, fx.min()), max(hi_x, fx.max())
        lo_y, hi_y = min(lo_y, fy.min()), max(hi_y, fy.max())

    x0, x1 = math.floor(lo_x + 1e-9), math.ceil(hi_x - 1e-9)
    y0, y1 = math.floor(lo_y + 1e-9), math.ceil(hi_y - 1e-9)
    width, height = x1 - x0 + 1, y1 - y0 + 1
    if width > cap or height > cap:
        raise UnboundedWarp(f"canvas {width}x{height} exceeds the {cap} px cap")
    return CanvasFrame(Point(float(-x0), float(-y0)), int(width), int(height))


def canvas_bounds(warp, target_dims, ref_dims, cap=None):
    return canvas_bounds_many([(warp, target_dims)], ref_dims, cap)


# ── Resampling ──────────────────────────────────────────────────────────────

def _sample_block(warp, img, frame, rows):
    gx, gy = frame.reference_grid(rows)
    sx, sy = warp.backward_xy(gx, gy)
    inside = (
        np.isfinite(sx) & np.isfinite(sy)
        & (sx >= 0) & (sx <= img.width - 1) & (sy >= 0) & (sy <= img.height - 1)
    )
    sx = np.where(inside, sx, 0.0)
    sy = np.where(inside, sy, 0.0)
    coords = np.stack([sy, sx])
    block = np.stack([
        ndimage.map_coordinates(img.data[..., k], coords, order=1, mode="nearest")
        for k in range(img.channels)
    ], axis=-1)
    if not img.valid.all():
        support = ndimage.map_coordinates(img.valid.astype(float), coords, order=1, mode="nearest")
        inside &= support >= 1.0 - 1e-9
    return block, inside


def warp_image(warp, img, frame, threads=None):
    """Backward-map every canvas pixel into `img` and sample it bilinearly."""
    threads = config.THREADS if threads is None else max(1, threads)
    out = np.zeros((frame.height, frame.width, img.channels))
    valid = np.zeros((frame.height, frame.width), dtype=bool)
    step = max(1, math.ceil(frame.height / (threads * 4)))
    blocks = [np.arange(r, min(r + step, frame.height)) for r in range(0, frame.height, step)]

    def run(rows):
        block, inside = _sample_block(warp, img, frame, rows)
        out[rows[0]:rows[-1] + 1] = block * inside[..., None]
        valid[rows[0]:rows[-1] + 1] = inside

    if threads == 1:
        for rows in blocks:
            run(rows)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, blocks))
    return Raster(out, valid)


def place_reference(ref, frame):
    """Copy the reference onto the canvas at its integer origin."""
    out = Raster.blank(frame.width, frame.height, ref.channels)
    ox, oy = int(round(frame.origin.x)), int(round(frame.origin.y))
    out.data[oy:oy + ref.height, ox:ox + ref.width] = ref.data
    out.valid[oy:oy + ref.height, ox:ox + ref.width] = ref.valid
    return out


# ── Seam ────────────────────────────────────────────────────────────────────

def pixel_difference(a, b):
    """Per-pixel colour Euclidean distance."""
    return np.sqrt(np.sum((a.data - b.data) ** 2, axis=-1))


def _cut_edges(labels_b, overlap):
    """Right and down neighbour pairs inside the overlap whose labels differ."""
    right = overlap[:, :-1] & overlap[:, 1:] & (labels_b[:, :-1] != labels_b[:, 1:])
    down = overlap[:-1, :] & overlap[1:, :] & (labels_b[:-1, :] != labels_b[1:, :])
    return right, down


def seam_cost(a, b, labels_b, overlap):
    """Sum over cut 4-neighbour edges of |a(p)-b(p)| + |a(q)-b(q)|."""
    diff = pixel_difference(a, b)
    right, down = _cut_edges(labels_b, overlap)
    cost = np.sum((diff[:, :-1] + diff[:, 1:])[right]) + np.sum((diff[:-1, :] + diff[1:, :])[down])
    return float(cost)


def _component_cut(diff, comp, source, sink):
    g = maxflow.GraphFloat()
    nodes = g.add_grid_nodes(comp.shape)

    w_right = np.zeros(comp.shape)
    w_right[:, :-1] = np.where(comp[:, :-1] & comp[:, 1:], diff[:, :-1] + diff[:, 1:], 0.0)
    w_down = np.zeros(comp.shape)
    w_down[:-1, :] = np.where(comp[:-1, :] & comp[1:, :], diff[:-1, :] + diff[1:, :], 0.0)
    g.add_grid_edges(nodes, weights=w_right, structure=RIGHT_EDGE, symmetric=True)
    g.add_grid_edges(nodes, weights=w_down, structure=DOWN_EDGE, symmetric=True)

    hard = 1.0 + 2.0 * float(w_right.sum() + w_down.sum())
    g.add_grid_tedges(nodes, np.where(source, hard, 0.0), np.where(sink, hard, 0.0))
    g.maxflow()
    # sink segment means the pixel is taken from b
    return g.get_grid_segments(nodes) & comp


def find_seam(a, b, overlap_mask):
    """Min-cut labelling of the overlap; True where the pixel is taken from b.

    Pixels next to the a-only region are tied to a, pixels next to the b-only
    region to b. A component touching neither stays with a.
    """
    overlap = np.asarray(overlap_mask, dtype=bool)
    if not overlap.any():
        raise NoOverlap("the two rasters do not overlap")
    a_only = a.valid & ~b.valid
    b_only = b.valid & ~a.valid
    near_a = ndimage.binary_dilation(a_only, structure=FOUR_CONNECTED) & overlap
    near_b = ndimage.binary_dilation(b_only, structure=FOUR_CONNECTED) & overlap
    diff = pixel_difference(a, b)

    take_b = np.zeros(overlap.shape, dtype=bool)
    components, count = ndimage.label(overlap, structure=FOUR_CONNECTED)
    for index, box in enumerate(ndimage.find_objects(components), start=1):
        comp = components[box] == index
        source = near_a[box] & comp & ~near_b[box]
        sink = near_b[box] & comp & ~near_a[box]
        if not source.any() and not sink.any():
            continue
        take_b[box] |= _component_cut(diff[box], comp, source, sink)
    logger.debug("seam: %d overlap component(s), %d px from b", count, int(take_b.sum()))
    return take_b


# ── Blending ────────────────────────────────────────────────────────────────

@dataclass
class Mosaic:
    canvas: Raster
    labels: np.ndarray
    seam: list
    frame: CanvasFrame
    seam_cost: float = 0.0
    report: dict = field(default_factory=dict)

    def seam_json(self):
        return [[int(x), int(y)] for x, y in self.seam]

    def save(self, path):
        """Mosaic PNG plus <stem>_labels.png and <stem>_seam.json next to it."""
        stem, _ = os.path.splitext(path)
        write_raster(self.canvas, path)
        write_labels(self.labels, f"{stem}_labels.png")
        with open(f"{stem}_seam.json", "w", encoding="utf-8") as f:
            json.dump(self.seam_json(), f, ensure_ascii=False)
        return [path, f"{stem}_labels.png", f"{stem}_seam.json"]


def seam_pixels(labels, multi_valid):
    """Overlap pixels 4-adjacent to a different non-negative label, in scanline order."""
    lab = np.asarray(labels)
    on = np.zeros(lab.shape, dtype=bool)
    h_diff = (lab[:, :-1] != lab[:, 1:]) & (lab[:, :-1] >= 0) & (lab[:, 1:] >= 0)
    v_diff = (lab[:-1, :] != lab[1:, :]) & (lab[:-1, :] >= 0) & (lab[1:, :] >= 0)
    on[:, :-1] |= h_diff
    on[:, 1:] |= h_diff
    on[:-1, :] |= v_diff
    on[1:, :] |= v_diff
    rows, cols = np.nonzero(on & multi_valid)
    return list(zip(cols.tolist(), rows.tolist()))


def _feather_weights(layers, labels, feather_px):
    weights = []
    for k, layer in enumerate(layers):
        inside = labels == k
        if not inside.any():
            weights.append(np.zeros(labels.shape))
            continue
        signed = ndimage.distance_transform_edt(inside) - ndimage.distance_transform_edt(~inside)
        weights.append(np.clip(0.5 + signed / (2.0 * feather_px), 0.0, 1.0) * layer.valid)
    weights = np.stack(weights)
    total = weights.sum(axis=0)
    return weights / np.where(total > 0, total, 1.0)


def blend_layers(layers, labels, frame, feather_px=0):
    """Copy each pixel from its labelled layer; optional feather across label boundaries."""
    labels = np.asarray(labels)
    valid_count = np.sum([layer.valid for layer in layers], axis=0)
    union = valid_count > 0
    gap = union & (labels < 0)
    for k, layer in enumerate(layers):
        gap |= (labels == k) & ~layer.valid
    if gap.any():
        rows, cols = np.nonzero(gap)
        raise LabelGap(f"{len(rows)} valid pixel(s) without a usable label, first at ({cols[0]}, {rows[0]})")

    channels = max(layer.channels for layer in layers)
    layers = [layer.with_channels(channels) for layer in layers]
    out = np.zeros((frame.height, frame.width, channels))
    if feather_px > 0:
        weights = _feather_weights(layers, labels, feather_px)
        for k, layer in enumerate(layers):
            out += weights[k][..., None] * layer.data
    else:
        for k, layer in enumerate(layers):
            sel = labels == k
            out[sel] = layer.data[sel]
    seam = seam_pixels(labels, valid_count > 1)
    return Mosaic(Raster(out, union), labels, seam, frame)


def blend(warped_target, ref_on_canvas, labels, frame, feather_px=0):
    """Two-layer blend: label 0 is the reference, label 1 the target."""
    return blend_layers([ref_on_canvas, warped_target], labels, frame, feather_px)
