"""Tests for canvas sizing, resampling, seam cutting and blending."""

import numpy as np
import pytest
from PIL import Image

from src.compositing import (
    CanvasFrame,
    Raster,
    blend,
    canvas_bounds,
    find_seam,
    place_reference,
    read_raster,
    seam_cost,
    seam_pixels,
    warp_image,
    write_labels,
    write_raster,
)
from src.errors import InputMissing, LabelGap, NoOverlap, UnboundedWarp
from src.geometry import Homography, Point
from src.synthetic import gradient, texture


# ── Canvas ──────────────────────────────────────────────────────────────────

def test_identity_canvas_is_reference_frame():
    frame = canvas_bounds(Homography.identity(), (80, 60), (80, 60))
    assert frame == CanvasFrame(Point(0.0, 0.0), 80, 60)


def test_translated_target_extends_canvas():
    frame = canvas_bounds(Homography.translation(30.0, -5.0), (80, 60), (80, 60))
    assert frame.width == 110
    assert frame.height == 65
    assert frame.origin == Point(0.0, 5.0)


def test_canvas_crossing_vanishing_line_is_unbounded():
    H = Homography((1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -0.002, 0.0))
    with pytest.raises(UnboundedWarp):
        canvas_bounds(H, (800, 600), (800, 600))


def test_canvas_without_reference():
    frame = canvas_bounds(Homography.translation(-20.0, 10.0), (50, 40), None)
    assert (frame.width, frame.height) == (50, 40)
    assert frame.origin == Point(20.0, -10.0)


# ── Resampling ──────────────────────────────────────────────────────────────

def test_identity_warp_reproduces_image():
    img = texture(64, 48, seed=3)
    frame = canvas_bounds(Homography.identity(), img.dims, img.dims)
    out = warp_image(Homography.identity(), img, frame)
    assert out.valid.all()
    np.testing.assert_allclose(out.data, img.data, atol=1e-12)


def test_integer_translation_shifts_pixels():
    img = texture(40, 30, seed=4)
    H = Homography.translation(7.0, 3.0)
    frame = canvas_bounds(H, img.dims, img.dims)
    out = warp_image(H, img, frame)
    ox, oy = int(frame.origin.x), int(frame.origin.y)
    np.testing.assert_allclose(out.data[oy + 3:oy + 33, ox + 7:ox + 47], img.data, atol=1e-9)
    assert out.valid[oy + 3:oy + 33, ox + 7:ox + 47].all()
    assert not out.valid[:oy + 3].any()


def test_threaded_resampling_matches_single_thread():
    img = gradient(90, 70)
    H = Homography((1.05, 0.02, 4.0, -0.01, 0.98, 2.0, 3e-4, 1e-4))
    frame = canvas_bounds(H, img.dims, img.dims)
    one = warp_image(H, img, frame, threads=1)
    many = warp_image(H, img, frame, threads=4)
    assert np.array_equal(one.data, many.data)
    assert np.array_equal(one.valid, many.valid)


def test_warp_and_inverse_warp_restore_gradient():
    img = gradient(90, 70)
    H = Homography((1.05, 0.02, 4.0, -0.01, 0.98, 2.0, 3e-4, 1e-4))
    frame = canvas_bounds(H, img.dims, None)
    warped = warp_image(H, img, frame)

    ox, oy = frame.origin.x, frame.origin.y
    back_map = Homography.from_matrix(H.inverse.matrix @ Homography.translation(-ox, -oy).matrix)
    back = warp_image(back_map, warped, CanvasFrame(Point(0.0, 0.0), img.width, img.height))

    assert back.valid.mean() > 0.9
    err = back.data[back.valid] - img.data[back.valid]
    psnr = 10.0 * np.log10(1.0 / np.mean(err ** 2))
    assert psnr > 40.0


def test_place_reference():
    ref = texture(20, 10, seed=5)
    frame = CanvasFrame(Point(3.0, 2.0), 30, 15)
    out = place_reference(ref, frame)
    np.testing.assert_array_equal(out.data[2:12, 3:23], ref.data)
    assert out.valid.sum() == 200


# ── Seam ────────────────────────────────────────────────────────────────────

def _seam_problem(gen):
    """8x8 canvas: a-only on the top row and left column, b-only on the bottom row and right column.

    The overlap is the inner 6x6 block.
    """
    a_valid = np.zeros((8, 8), dtype=bool)
    b_valid = np.zeros((8, 8), dtype=bool)
    a_valid[1:7, 1:7] = b_valid[1:7, 1:7] = True
    a_valid[0, :7] = a_valid[:7, 0] = True
    b_valid[7, 1:] = b_valid[1:, 7] = True
    a = Raster(gen.random((8, 8, 3)), a_valid)
    b = Raster(gen.random((8, 8, 3)), b_valid)
    return a, b, a_valid & b_valid


def _brute_force_cost(a, b, overlap):
    """Minimum seam cost over every labelling of the unconstrained overlap pixels."""
    near_a = np.zeros_like(overlap)
    near_b = np.zeros_like(overlap)
    near_a[1, 1:7] = near_a[1:7, 1] = True
    near_b[6, 1:7] = near_b[1:7, 6] = True
    fixed_a = near_a & ~near_b
    fixed_b = near_b & ~near_a
    free = np.argwhere(overlap & ~fixed_a & ~fixed_b)
    assert len(free) == 18

    states = ((np.arange(2 ** len(free))[:, None] >> np.arange(len(free))) & 1).astype(bool)
    labels = np.broadcast_to(fixed_b, (len(states), 8, 8)).copy()
    labels[:, free[:, 0], free[:, 1]] = states

    diff = np.sqrt(np.sum((a.data - b.data) ** 2, axis=-1))
    cost = np.zeros(len(states))
    for r, c in np.argwhere(overlap):
        for dr, dc in ((0, 1), (1, 0)):
            rr, cc = r + dr, c + dc
            if rr < 8 and cc < 8 and overlap[rr, cc]:
                cut = labels[:, r, c] != labels[:, rr, cc]
                cost += cut * (diff[r, c] + diff[rr, cc])
    return cost.min()


def test_seam_matches_brute_force_min_cut():
    gen = np.random.default_rng(31)
    for _ in range(20):
        a, b, overlap = _seam_problem(gen)
        take_b = find_seam(a, b, overlap)
        assert not take_b[1, 2:6].any() and not take_b[2:6, 1].any()
        assert take_b[6, 2:6].all() and take_b[2:6, 6].all()
        assert seam_cost(a, b, take_b, overlap) == pytest.approx(_brute_force_cost(a, b, overlap), rel=1e-12)


def test_identical_layers_cut_for_free():
    gen = np.random.default_rng(8)
    a, b, overlap = _seam_problem(gen)
    b = Raster(a.data.copy(), b.valid)
    take_b = find_seam(a, b, overlap)
    assert seam_cost(a, b, take_b, overlap) == 0.0


def test_seam_without_overlap():
    a = Raster(np.zeros((4, 4, 3)), np.eye(4, dtype=bool))
    with pytest.raises(NoOverlap):
        find_seam(a, a, np.zeros((4, 4), dtype=bool))


def test_enclosed_overlap_component_stays_with_first_layer():
    a = Raster(np.zeros((5, 5, 3)))
    b = Raster(np.ones((5, 5, 3)))
    overlap = np.ones((5, 5), dtype=bool)
    assert not find_seam(a, b, overlap).any()


# ── Blending ────────────────────────────────────────────────────────────────

def test_blend_copies_labelled_layer_and_lists_seam():
    frame = CanvasFrame(Point(0.0, 0.0), 4, 2)
    ref = Raster(np.zeros((2, 4, 3)), np.array([[1, 1, 1, 0], [1, 1, 1, 0]], dtype=bool))
    tgt = Raster(np.ones((2, 4, 3)), np.array([[0, 1, 1, 1], [0, 1, 1, 1]], dtype=bool))
    labels = np.array([[0, 0, 1, 1], [0, 0, 1, 1]])
    mosaic = blend(tgt, ref, labels, frame)
    assert mosaic.canvas.data[0, :, 0].tolist() == [0.0, 0.0, 1.0, 1.0]
    assert mosaic.canvas.valid.all()
    assert mosaic.seam == [(1, 0), (2, 0), (1, 1), (2, 1)]


def test_blend_rejects_unlabelled_pixels():
    frame = CanvasFrame(Point(0.0, 0.0), 2, 1)
    ref = Raster(np.zeros((1, 2, 3)))
    tgt = Raster(np.ones((1, 2, 3)), np.zeros((1, 2), dtype=bool))
    with pytest.raises(LabelGap):
        blend(tgt, ref, np.array([[0, -1]]), frame)


def test_feathered_blend_mixes_across_seam():
    frame = CanvasFrame(Point(0.0, 0.0), 8, 1)
    ref = Raster(np.zeros((1, 8, 3)))
    tgt = Raster(np.ones((1, 8, 3)))
    labels = np.array([[0, 0, 0, 0, 1, 1, 1, 1]])
    hard = blend(tgt, ref, labels, frame).canvas.data[0, :, 0]
    soft = blend(tgt, ref, labels, frame, feather_px=4).canvas.data[0, :, 0]
    assert hard.tolist() == [0, 0, 0, 0, 1, 1, 1, 1]
    assert 0.0 < soft[3] < soft[4] < 1.0
    assert np.all(np.diff(soft) >= 0)


def test_seam_pixels_scanline_order():
    labels = np.array([[0, 1], [0, 0]])
    assert seam_pixels(labels, np.ones((2, 2), dtype=bool)) == [(0, 0), (1, 0), (1, 1)]


# ── Raster I/O ──────────────────────────────────────────────────────────────

def test_png_round_trip_with_alpha(tmp_path):
    data = np.round(gradient(12, 8).data * 255) / 255
    valid = np.ones((8, 12), dtype=bool)
    valid[:, :3] = False
    path = tmp_path / "img.png"
    rgba = np.dstack([np.round(data * 255).astype(np.uint8), (valid * 255).astype(np.uint8)])
    Image.fromarray(rgba).save(path)
    loaded = read_raster(str(path))
    assert np.array_equal(loaded.valid, valid)
    np.testing.assert_allclose(loaded.data, data, atol=1e-12)


def test_write_raster_blackens_invalid_pixels(tmp_path):
    img = Raster(np.ones((4, 4, 3)), np.tri(4, dtype=bool))
    path = tmp_path / "out.png"
    write_raster(img, str(path))
    back = read_raster(str(path))
    assert back.data[0, 3].tolist() == [0.0, 0.0, 0.0]
    assert back.data[3, 0].tolist() == [1.0, 1.0, 1.0]


def test_label_png_offsets_labels(tmp_path):
    path = tmp_path / "labels.png"
    write_labels(np.array([[-1, 0], [1, 2]]), str(path))
    back = read_raster(str(path))
    assert (np.round(back.data[..., 0] * 255)).astype(int).tolist() == [[0, 1], [2, 3]]


def test_read_missing_image(tmp_path):
    with pytest.raises(InputMissing):
        read_raster(str(tmp_path / "nope.png"))
