"""
Quasi-homography stitcher entry point.

    python app.py stitch --target a.png --ref b.png --corrs m.jsonl --out mosaic.png
    python app.py diagnose-mesh --h 1 0 0 0 1 0 0.001 0 1 --out mesh.svg
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
