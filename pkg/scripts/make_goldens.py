"""Regenerate the diagnostic golden files under tests/golden/."""

import argparse
import os
import sys

import numpy as np

sys.path.append(os.path.join(os.path.dirname(__file__), ".."))

from scripts.utils import ensure_dir, report_saved  # noqa: E402
from src.diagnostics import diagnose_mesh, scale_table, write_table  # noqa: E402
from src.geometry import Homography  # noqa: E402

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "..", "tests", "golden")

# x -> x / (1 + 0.001 x), y -> y / (1 + 0.001 x); horizon row y* = 0
RUNNING_EXAMPLE = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.001, 0.0)


class GoldenWriter:
    def __init__(self, out_dir):
        self.out_dir = ensure_dir(out_dir)
        self.H = Homography(RUNNING_EXAMPLE)

    def write_mesh(self):
        svg, _ = diagnose_mesh(self.H, 0.0, (-500.0, 500.0), (-300.0, 300.0), (3, 3))
        path = os.path.join(self.out_dir, "mesh.svg")
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(svg)
        return path

    def write_scale(self):
        df, _, _ = scale_table(self.H, 0.0, np.linspace(-500.0, 1000.0, 4))
        path = os.path.join(self.out_dir, "scale.csv")
        write_table(df, path)
        return path

    def execute(self):
        report_saved([self.write_mesh(), self.write_scale()])


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Regenerate diagnostic goldens.")
    parser.add_argument("--out", default=GOLDEN_DIR)
    args = parser.parse_args()
    GoldenWriter(args.out).execute()
