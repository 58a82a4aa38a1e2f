"""Tests for DLT, RANSAC, the boundary-vertical fit and correspondence I/O."""

import json

import numpy as np
import pytest

from src.errors import (
    DegenerateConfiguration,
    EmptySeam,
    InputInvalid,
    InputMissing,
    NoConsensus,
    TooFewFeatures,
)
from src.compositing import Raster
from src.estimation import (
    CorrespondenceSet,
    RansacParams,
    algebraic_cost,
    boundary_violation,
    detect_and_match,
    dlt,
    estimate_rectified,
    load_csv_pair,
    load_jsonl,
    ransac,
    refine_partition,
    required_iterations,
    save_jsonl,
    transfer_errors,
)
from src.geometry import Homography
from src.synthetic import correspondences, crop, perspective_pair, random_homography, texture

DIMS = (800, 600)


def _assert_same_map(H, G, tol=1e-6):
    xs, ys = np.meshgrid(np.linspace(0, DIMS[0] - 1, 9), np.linspace(0, DIMS[1] - 1, 7))
    hx, hy = H.apply_xy(xs, ys)
    gx, gy = G.apply_xy(xs, ys)
    np.testing.assert_allclose(hx, gx, atol=tol)
    np.testing.assert_allclose(hy, gy, atol=tol)


# ── DLT ─────────────────────────────────────────────────────────────────────

def test_dlt_recovers_exact_homography(random_homographies):
    for k, H in enumerate(random_homographies[:10]):
        corrs, _ = correspondences(H, 30, DIMS, DIMS, seed=k)
        _assert_same_map(dlt(corrs), H)


def test_dlt_minimal_sample():
    H = Homography((1.1, 0.02, 12.0, -0.03, 0.95, 4.0, 2e-4, -1e-4))
    src = np.array([[0.0, 0.0], [799.0, 0.0], [799.0, 599.0], [0.0, 599.0]])
    fx, fy = H.apply_xy(src[:, 0], src[:, 1])
    G = dlt(CorrespondenceSet.from_arrays(src, np.column_stack([fx, fy])))
    _assert_same_map(G, H)


def test_dlt_too_few_points():
    corrs = CorrespondenceSet.from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 0], [1, 0], [0, 1]])
    with pytest.raises(DegenerateConfiguration):
        dlt(corrs)


def test_dlt_collinear_minimal_sample():
    src = [[0, 0], [1, 1], [2, 2], [0, 5]]
    with pytest.raises(DegenerateConfiguration):
        dlt(CorrespondenceSet.from_arrays(src, src))


def test_transfer_errors_zero_for_exact_matches(random_homographies):
    H = random_homographies[0]
    corrs, _ = correspondences(H, 20, DIMS, DIMS)
    assert transfer_errors(H, corrs.src, corrs.dst).max() < 1e-12


# ── RANSAC ──────────────────────────────────────────────────────────────────

def test_required_iterations():
    assert required_iterations(1.0, 0.995, 2000) == 1
    assert required_iterations(0.0, 0.995, 2000) == 2000
    assert required_iterations(0.5, 0.99, 2000) == 72


def test_ransac_separates_outliers(rng):
    H = random_homography(rng)
    corrs, truth = correspondences(H, 200, DIMS, DIMS, outlier_ratio=0.3, seed=7)
    G, mask = ransac(corrs)
    assert np.array_equal(mask, truth)
    _assert_same_map(G, H)


def test_ransac_is_deterministic_for_a_seed(rng):
    H = random_homography(rng)
    corrs, _ = correspondences(H, 120, DIMS, DIMS, outlier_ratio=0.4, noise_px=0.5, seed=3)
    params = RansacParams(seed=11)
    G1, m1 = ransac(corrs, params)
    G2, m2 = ransac(corrs, params)
    assert G1 == G2
    assert np.array_equal(m1, m2)


def test_ransac_on_clean_set_equals_dlt(rng):
    H = random_homography(rng)
    corrs, _ = correspondences(H, 60, DIMS, DIMS, seed=4)
    G, mask = ransac(corrs)
    assert mask.all()
    assert G == dlt(corrs)
    _assert_same_map(G, H)


def test_ransac_inlier_rms_below_half_pixel():
    pair = perspective_pair(width=200, height=150, shift=75.0, h7=8e-4)
    corrs, truth = pair.correspondences(n=100, outlier_ratio=0.3)
    G, mask = ransac(corrs)
    inl = corrs.subset(mask)
    fx, fy = G.forward_xy(inl.src[:, 0], inl.src[:, 1])
    rms = np.sqrt(np.mean((fx - inl.dst[:, 0]) ** 2 + (fy - inl.dst[:, 1]) ** 2))
    assert rms < 0.5
    assert mask.sum() >= truth.sum()


def test_ransac_on_noise_has_no_consensus():
    gen = np.random.default_rng(5)
    src = gen.uniform(0, 800, (40, 2))
    dst = gen.uniform(0, 800, (40, 2))
    with pytest.raises(NoConsensus):
        ransac(CorrespondenceSet.from_arrays(src, dst), RansacParams(inlier_threshold_px=1.0))


def test_ransac_needs_more_than_a_minimal_consensus(rng):
    H = random_homography(rng)
    corrs, _ = correspondences(H, 6, DIMS, DIMS, seed=9)
    with pytest.raises(NoConsensus, match="need 8"):
        ransac(corrs)


def test_ransac_rejects_bad_parameters():
    with pytest.raises(InputInvalid):
        RansacParams(confidence=1.0)
    with pytest.raises(InputInvalid):
        RansacParams(inlier_threshold_px=0.0)


# ── Boundary-vertical fit ───────────────────────────────────────────────────

def test_rectified_fit_keeps_outer_column_vertical():
    gen = np.random.default_rng(99)
    w, h = 640, 480
    for k in range(20):
        H = random_homography(gen)
        corrs, _ = correspondences(H, 80, (w, h), (w, h), outlier_ratio=0.2, noise_px=0.3, seed=k)
        G = estimate_rectified(corrs, w, h)
        assert boundary_violation(G, float(w), h) < 1e-6
        assert boundary_violation(H, float(w), h) > boundary_violation(G, float(w), h)


def test_rectified_fit_left_boundary():
    gen = np.random.default_rng(17)
    H = random_homography(gen)
    corrs, _ = correspondences(H, 80, (640, 480), (640, 480), seed=1)
    G = estimate_rectified(corrs, 640, 480, boundary_x=0.0)
    assert boundary_violation(G, 0.0, 480) < 1e-6


def test_rectified_fit_recovers_constraint_satisfying_homography():
    w, h = 640, 480
    h1, h2, h3, h7 = 1.05, 0.02, 10.0, 2e-4
    h8 = h2 * (h7 * w + 1.0) / (h1 * w + h3)
    H = Homography((h1, h2, h3, 0.01, 0.98, 5.0, h7, h8))
    assert boundary_violation(H, float(w), h) < 1e-9

    corrs, _ = correspondences(H, 80, (w, h), (w, h), seed=2)
    G = estimate_rectified(corrs, w, h)
    rel = np.linalg.norm(G.matrix - H.matrix) / np.linalg.norm(H.matrix)
    assert rel < 1e-6


def test_rectified_fit_costs_at_least_the_free_fit():
    gen = np.random.default_rng(23)
    for k in range(5):
        H = random_homography(gen)
        corrs, _ = correspondences(H, 80, (640, 480), (640, 480), seed=k)
        G = estimate_rectified(corrs, 640, 480)
        assert algebraic_cost(G, corrs) >= algebraic_cost(dlt(corrs), corrs)


# ── Partition refinement ────────────────────────────────────────────────────

def test_refine_partition_moves_just_past_seam():
    assert refine_partition([10, 12, 15], 100) == 16.0


def test_refine_partition_is_clipped_to_overlap():
    assert refine_partition([140, 150], 120) == 121.0


def test_refine_partition_without_seam():
    with pytest.raises(EmptySeam):
        refine_partition([], 100)


# ── Correspondence files ────────────────────────────────────────────────────

def test_jsonl_round_trip(tmp_path, random_homographies):
    corrs, _ = correspondences(random_homographies[0], 10, DIMS, DIMS)
    path = tmp_path / "m.jsonl"
    save_jsonl(corrs, path)
    loaded = load_jsonl(path)
    np.testing.assert_array_equal(loaded.src, corrs.src)
    np.testing.assert_array_equal(loaded.dst, corrs.dst)


def test_jsonl_reference_to_target_order_is_swapped(tmp_path):
    path = tmp_path / "m.jsonl"
    rows = [{"order": "reference_to_target"}, {"sx": 1, "sy": 2, "dx": 3, "dy": 4}]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    corrs = load_jsonl(path)
    assert corrs.src.tolist() == [[3.0, 4.0]]
    assert corrs.dst.tolist() == [[1.0, 2.0]]


def test_jsonl_without_header_rejected(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps({"sx": 1, "sy": 2, "dx": 3, "dy": 4}) + "\n", encoding="utf-8")
    with pytest.raises(InputInvalid):
        load_jsonl(path)


def test_jsonl_missing_file(tmp_path):
    with pytest.raises(InputMissing):
        load_jsonl(tmp_path / "absent.jsonl")


def test_csv_pair(tmp_path):
    (tmp_path / "t.csv").write_text("x,y\n1,2\n3,4\n", encoding="utf-8")
    (tmp_path / "r.csv").write_text("5,6\n7,8\n", encoding="utf-8")
    corrs = load_csv_pair(tmp_path / "t.csv", tmp_path / "r.csv")
    assert corrs.src.tolist() == [[1.0, 2.0], [3.0, 4.0]]
    assert corrs.dst.tolist() == [[5.0, 6.0], [7.0, 8.0]]


def test_csv_pair_length_mismatch(tmp_path):
    (tmp_path / "t.csv").write_text("1,2\n3,4\n", encoding="utf-8")
    (tmp_path / "r.csv").write_text("5,6\n", encoding="utf-8")
    with pytest.raises(InputInvalid):
        load_csv_pair(tmp_path / "t.csv", tmp_path / "r.csv")


def test_reversed_swaps_roles(random_homographies):
    corrs, _ = correspondences(random_homographies[0], 5, DIMS, DIMS)
    back = corrs.reversed()
    np.testing.assert_array_equal(back.src, corrs.dst)
    np.testing.assert_array_equal(back.dst, corrs.src)


# ── Matcher ─────────────────────────────────────────────────────────────────

def test_matcher_on_flat_images():
    flat = Raster(np.full((60, 80, 3), 0.5))
    with pytest.raises(TooFewFeatures):
        detect_and_match(flat, flat)


def test_matcher_finds_a_pure_shift():
    scene = texture(410, 300, seed=5)
    shifted = crop(scene, 10, 0, 400, 300)
    original = crop(scene, 0, 0, 400, 300)
    matches = detect_and_match(shifted, original)
    assert len(matches) >= 20
    offset = matches.dst - matches.src - np.array([10.0, 0.0])
    close = np.hypot(offset[:, 0], offset[:, 1]) < 1.0
    assert close.mean() >= 0.9


def test_matcher_on_unrelated_noise():
    gen = np.random.default_rng(8)
    noise = Raster(gen.random((300, 400, 3)))
    with pytest.raises(TooFewFeatures):
        detect_and_match(texture(400, 300, seed=5), noise)
