"""Synthetic scenes, views and correspondence sets with known geometry."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from src.compositing import Raster
from src.estimation import CorrespondenceSet
from src.geometry import Homography


def texture(width, height, seed=0, channels=3, sigma=3.0):
    """Smooth coloured noise stretched to [0, 1] per channel."""
    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(channels):
        coarse = ndimage.gaussian_filter(rng.random((height, width)), sigma * 4)
        fine = ndimage.gaussian_filter(rng.random((height, width)), sigma)
        layer = coarse / coarse.std() + fine / fine.std()
        layer = (layer - layer.min()) / (layer.max() - layer.min())
        layers.append(layer)
    return Raster(np.stack(layers, axis=-1))


def gradient(width, height):
    """Smooth two-axis gradient used for resampling round trips."""
    xs, ys = np.meshgrid(np.linspace(0, 1, width), np.linspace(0, 1, height))
    return Raster(np.stack([xs, ys, 0.5 * (xs + ys)], axis=-1))


def crop(raster, x0, y0, width, height):
    return Raster(
        raster.data[y0:y0 + height, x0:x0 + width].copy(),
        raster.valid[y0:y0 + height, x0:x0 + width].copy(),
    )


def render_view(scene, H, width, height):
    """View whose pixel p shows the scene at H(p); samples off the scene are invalid."""
    gx, gy = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    sx, sy = H.forward_xy(gx, gy)
    inside = (
        np.isfinite(sx) & np.isfinite(sy)
        & (sx >= 0) & (sx <= scene.width - 1) & (sy >= 0) & (sy <= scene.height - 1)
    )
    coords = np.stack([np.where(inside, sy, 0.0), np.where(inside, sx, 0.0)])
    data = np.stack([
        ndimage.map_coordinates(scene.data[..., k], coords, order=1, mode="nearest")
        for k in range(scene.channels)
    ], axis=-1)
    return Raster(data * inside[..., None], inside)


def random_homography(rng, perspective=1e-3, min_h7=2e-4):
    """Well-conditioned orientation-preserving H with a noticeable horizontal perspective term."""
    h7 = rng.uniform(min_h7, perspective) * rng.choice([-1.0, 1.0])
    # |y*| stays below ~600 px and the denominator positive over x in [-200, 800]
    return Homography((
        1.0 + rng.uniform(-0.1, 0.1), rng.uniform(-0.05, 0.05), rng.uniform(-50, 50),
        rng.uniform(-0.05, 0.05), 1.0 + rng.uniform(-0.1, 0.1), rng.uniform(-50, 50),
        h7, rng.uniform(-perspective / 10, perspective / 10),
    ))


def correspondences(H, n, src_dims, dst_dims, outlier_ratio=0.0, noise_px=0.0, seed=0):
    """Sources uniform in the source rectangle; inliers follow H, outliers are uniform in dst.

    Returns the set and the boolean truth mask of inliers.
    """
    rng = np.random.default_rng(seed)
    sw, sh = src_dims
    dw, dh = dst_dims
    src = np.column_stack([rng.uniform(0, sw - 1, n), rng.uniform(0, sh - 1, n)])
    dx, dy = H.forward_xy(src[:, 0], src[:, 1])
    dst = np.column_stack([dx, dy])
    if noise_px > 0:
        dst = dst + rng.normal(0.0, noise_px, dst.shape)

    truth = np.ones(n, dtype=bool)
    n_out = int(round(outlier_ratio * n))
    if n_out:
        idx = rng.choice(n, n_out, replace=False)
        dst[idx] = np.column_stack([rng.uniform(0, dw - 1, n_out), rng.uniform(0, dh - 1, n_out)])
        truth[idx] = False
    return CorrespondenceSet.from_arrays(src, dst), truth


@dataclass
class PanoramaProblem:
    """Crops of one wide scene; each crop is `shift` px right of the previous one."""

    scene: Raster
    views: list
    shift: int

    def homography(self, i, j):
        """Map from view i to view j."""
        return Homography.translation((i - j) * self.shift, 0.0)

    def pair_correspondences(self, i, j, n=100, outlier_ratio=0.3, seed=0):
        v = self.views[i]
        return correspondences(self.homography(i, j), n, v.dims, self.views[j].dims, outlier_ratio, seed=seed)


def panorama(width=800, height=600, shift=300, count=2, seed=0):
    scene = texture(width + shift * (count - 1), height, seed=seed)
    views = [crop(scene, i * shift, 0, width, height) for i in range(count)]
    return PanoramaProblem(scene, views, shift)


@dataclass
class PerspectivePair:
    """Reference = top-left crop of the scene; target pixel p shows the scene at H(p)."""

    scene: Raster
    reference: Raster
    target: Raster
    H: Homography

    def correspondences(self, n=100, outlier_ratio=0.3, seed=0):
        return correspondences(self.H, n, self.target.dims, self.reference.dims, outlier_ratio, seed=seed)


def perspective_pair(width=800, height=600, shift=300.0, h7=2e-4, seed=0):
    H = Homography((1.0, 0.0, shift, 0.0, 1.0, 0.0, h7, 0.0))
    scene = texture(width + int(shift), height, seed=seed)
    reference = crop(scene, 0, 0, width, height)
    target = render_view(scene, H, width, height)
    return PerspectivePair(scene, reference, target, H)
