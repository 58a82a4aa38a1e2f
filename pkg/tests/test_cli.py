"""End-to-end tests of the command line through main(argv)."""

import json
import os

import pandas as pd
import pytest

from src.cli import main
from src.compositing import write_raster
from src.estimation import boundary_violation, save_jsonl
from src.geometry import Homography
from src.synthetic import correspondences, perspective_pair, texture

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")
RUNNING_H = ["1", "0", "0", "0", "1", "0", "0.001", "0", "1"]
DECREASING_H = ["-1", "0", "0", "0", "1", "0", "0.001", "0", "1"]


def _stderr_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def pair_files(tmp_path_factory):
    """Small perspective pair written as PNGs plus its correspondence file."""
    root = tmp_path_factory.mktemp("pair")
    pair = perspective_pair(width=200, height=150, shift=75.0, h7=8e-4)
    corrs, _ = pair.correspondences(n=100, outlier_ratio=0.3)
    paths = {"target": root / "target.png", "ref": root / "ref.png", "corrs": root / "matches.jsonl"}
    write_raster(pair.target, str(paths["target"]))
    write_raster(pair.reference, str(paths["ref"]))
    save_jsonl(corrs, paths["corrs"])
    return {k: str(v) for k, v in paths.items()}


# ── Diagnostics ─────────────────────────────────────────────────────────────

def test_diagnose_mesh_matches_golden(tmp_path, capsys):
    out = tmp_path / "mesh.svg"
    code = main([
        "diagnose-mesh", "--h", *RUNNING_H, "--x-star", "0",
        "--x-range", "-500", "500", "--y-range", "-300", "300", "--steps", "3", "3",
        "--out", str(out),
    ])
    assert code == 0
    with open(os.path.join(GOLDEN_DIR, "mesh.svg"), encoding="utf-8", newline="") as f:
        assert out.read_text(encoding="utf-8") == f.read()
    assert (tmp_path / "mesh_mesh.json").exists()
    assert f"Saved: {out}" in capsys.readouterr().out


def test_diagnose_mesh_of_affine_map_suggests_homography_mode(tmp_path, capsys):
    args = ["diagnose-mesh", "--h", "1", "0", "30", "0", "1", "5", "0", "0", "1", "--out", str(tmp_path / "m.svg")]
    assert main(args) == 3
    err = _stderr_json(capsys)
    assert err["type"] == "AffineDegenerate"
    assert "--mode homography" in err["message"]

    assert main(args + ["--mode", "homography"]) == 0


def test_diagnose_scale_notes_linear_homography(tmp_path, capsys):
    out = tmp_path / "scale.csv"
    code = main(["diagnose-scale", "--h", "1.2", "0.1", "5", "0", "1", "0", "0", "0", "1",
                 "--samples", "11", "--out", str(out)])
    assert code == 0
    assert "Note:" in capsys.readouterr().out
    df = pd.read_csv(out)
    assert list(df.columns) == ["x", "f0", "f_dagger"]
    assert len(df) == 11
    assert (tmp_path / "scale.svg").exists()


def test_metrics_writes_json_and_csv(tmp_path):
    out = tmp_path / "metrics.json"
    csv = tmp_path / "metrics.csv"
    code = main(["metrics", "--h", *RUNNING_H, "--x-star", "0", "--x-range", "-500", "500",
                 "--out", str(out), "--csv", str(csv)])
    assert code == 0
    result = json.loads(out.read_text(encoding="utf-8"))
    assert result["quasi"]["scale_nonlinearity"] < 1e-10
    assert result["homography"]["scale_nonlinearity"] > 0
    assert len(pd.read_csv(csv)) == 2


def test_missing_homography_file(tmp_path, capsys):
    code = main(["metrics", "--homography", str(tmp_path / "absent.txt"), "--out", str(tmp_path / "m.json")])
    assert code == 2
    assert _stderr_json(capsys)["error"] == "input-missing"


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"bogus": 1}), encoding="utf-8")
    code = main(["metrics", "--h", *RUNNING_H, "--config", str(cfg), "--out", str(tmp_path / "m.json")])
    assert code == 2
    assert "bogus" in _stderr_json(capsys)["message"]


def test_config_values_are_overridden_by_flags(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"x_star": 300.0, "homography": [float(v) for v in RUNNING_H]}), encoding="utf-8")
    out = tmp_path / "m.json"
    assert main(["metrics", "--config", str(cfg), "--x-star", "0", "--out", str(out)]) == 0
    assert json.loads(out.read_text(encoding="utf-8"))["x_star"] == 0.0


# ── Stitching and warping ───────────────────────────────────────────────────

def test_stitch_writes_all_artifacts(pair_files, tmp_path, capsys):
    out = tmp_path / "out" / "mosaic.png"
    code = main(["stitch", "--target", pair_files["target"], "--ref", pair_files["ref"],
                 "--corrs", pair_files["corrs"], "--out", str(out)])
    assert code == 0
    for name in ("mosaic.png", "mosaic_labels.png", "mosaic_seam.json", "mosaic_report.json"):
        assert (tmp_path / "out" / name).exists()
    report = json.loads((tmp_path / "out" / "mosaic_report.json").read_text(encoding="utf-8"))
    assert report["pairs"][0]["warp"] == "quasi"
    assert capsys.readouterr().out.count("Saved:") == 4


def test_stitch_without_correspondences(pair_files, tmp_path, capsys):
    code = main(["stitch", "--target", pair_files["target"], "--ref", pair_files["ref"],
                 "--out", str(tmp_path / "m.png")])
    assert code == 2
    assert _stderr_json(capsys)["error"] == "input-missing"


def test_estimate_writes_homography_and_stats(pair_files, tmp_path):
    out = tmp_path / "H.txt"
    assert main(["estimate", "--corrs", pair_files["corrs"], "--out", str(out)]) == 0
    stats = json.loads((tmp_path / "H_stats.json").read_text(encoding="utf-8"))
    assert stats["total"] == 100
    assert stats["inliers"] >= 70
    assert stats["inlier_rms_px"] < 0.5
    assert len(out.read_text(encoding="utf-8").split()) == 9


def test_estimate_rectifies_left_boundary_of_left_target(tmp_path):
    H = Homography((1.0, 0.02, -120.0, 0.01, 1.0, 3.0, -5e-4, 1e-4))
    corrs, _ = correspondences(H, 100, (200, 150), (200, 150), seed=3)
    paths = {name: tmp_path / f"{name}.png" for name in ("target", "ref")}
    for k, path in enumerate(paths.values()):
        write_raster(texture(200, 150, seed=k), str(path))
    save_jsonl(corrs, tmp_path / "m.jsonl")

    out = tmp_path / "H.txt"
    code = main(["estimate", "--target", str(paths["target"]), "--ref", str(paths["ref"]),
                 "--corrs", str(tmp_path / "m.jsonl"), "--rectify", "--out", str(out)])
    assert code == 0
    G = Homography.load(out)
    assert boundary_violation(G, 0.0, 150) < 1e-6
    assert boundary_violation(G, 199.0, 150) > 1e-3


def test_warp_writes_image_and_mask(tmp_path):
    img = tmp_path / "img.png"
    write_raster(texture(60, 40, seed=2), str(img))
    out = tmp_path / "warped.png"
    code = main(["warp", "--image", str(img), "--h", "1", "0", "0", "0", "1", "0", "0.0005", "0", "1",
                 "--out", str(out)])
    assert code == 0
    assert out.exists()
    assert (tmp_path / "warped_mask.png").exists()


def test_warp_with_decreasing_scale_falls_back(tmp_path, capsys):
    img = tmp_path / "img.png"
    write_raster(texture(60, 40, seed=2), str(img))
    args = ["warp", "--image", str(img), "--h", *DECREASING_H, "--out", str(tmp_path / "w.png")]
    assert main(args) == 0
    assert "with homography" in capsys.readouterr().out

    assert main(args + ["--no-fallback"]) == 3
    assert _stderr_json(capsys)["type"] == "NonMonotoneScale"


def test_metrics_with_decreasing_scale_reports_no_quasi(tmp_path):
    out = tmp_path / "m.json"
    assert main(["metrics", "--h", *DECREASING_H, "--x-star", "0", "--x-range", "-500", "500",
                 "--out", str(out)]) == 0
    result = json.loads(out.read_text(encoding="utf-8"))
    assert result["quasi"] is None
    assert "scale derivative" in result["note"]
