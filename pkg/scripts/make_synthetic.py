"""Write synthetic stitching problems (images, correspondences, true homographies) to disk."""

import argparse
import os
import sys

sys.path.append(os.path.join(os.path.dirname(__file__), ".."))

from scripts.utils import ensure_dir, export_csv, report_saved  # noqa: E402
from src.compositing import write_raster  # noqa: E402
from src.estimation import save_jsonl  # noqa: E402
from src.synthetic import panorama, perspective_pair  # noqa: E402


class SyntheticWriter:
    def __init__(self, out_dir, width, height, outlier_ratio, seed):
        self.out_dir = ensure_dir(out_dir)
        self.width = width
        self.height = height
        self.outlier_ratio = outlier_ratio
        self.seed = seed
        self.rows = []

    def _path(self, name):
        return os.path.join(self.out_dir, name)

    def _record(self, problem, kind, path):
        self.rows.append({"problem": problem, "kind": kind, "path": path})
        return path

    def write_pair(self, shift, h7):
        """Perspective pair: the reference is a crop, the target is a view through a known H."""
        pair = perspective_pair(self.width, self.height, shift, h7, seed=self.seed)
        corrs, truth = pair.correspondences(n=200, outlier_ratio=self.outlier_ratio, seed=self.seed)

        write_raster(pair.target, self._record("pair", "target", self._path("pair_target.png")))
        write_raster(pair.reference, self._record("pair", "reference", self._path("pair_ref.png")))
        save_jsonl(corrs, self._record("pair", "correspondences", self._path("pair_matches.jsonl")))
        pair.H.save(self._record("pair", "homography", self._path("pair_H.txt")))
        print(f"Perspective pair: {len(corrs)} correspondences, {int(truth.sum())} inliers")

    def write_panorama(self, shift, count):
        """Overlapping crops of one scene, plus one correspondence file per adjacent pair."""
        pano = panorama(self.width, self.height, shift, count, seed=self.seed)
        for i, view in enumerate(pano.views):
            write_raster(view, self._record("panorama", "view", self._path(f"pano_{i}.png")))
        for i in range(count - 1):
            corrs, _ = pano.pair_correspondences(i, i + 1, n=120, outlier_ratio=self.outlier_ratio, seed=self.seed + i)
            save_jsonl(corrs, self._record("panorama", "correspondences", self._path(f"pano_{i}_{i + 1}.jsonl")))
        print(f"Panorama: {count} views, {shift} px apart")

    def execute(self, shift, h7, pano_count):
        self.write_pair(shift, h7)
        self.write_panorama(int(shift), pano_count)
        manifest = self._path("manifest.csv")
        export_csv(manifest, self.rows)
        report_saved([r["path"] for r in self.rows] + [manifest])


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Generate synthetic stitching problems.")
    parser.add_argument("--out", default="data", help="output directory")
    parser.add_argument("--width", type=int, default=800)
    parser.add_argument("--height", type=int, default=600)
    parser.add_argument("--shift", type=float, default=300.0, help="horizontal offset between views in px")
    parser.add_argument("--h7", type=float, default=2e-4, help="perspective term of the pair homography")
    parser.add_argument("--pano-count", type=int, default=3)
    parser.add_argument("--outliers", type=float, default=0.3, help="fraction of wrong correspondences")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    writer = SyntheticWriter(args.out, args.width, args.height, args.outliers, args.seed)
    writer.execute(args.shift, args.h7, args.pano_count)
