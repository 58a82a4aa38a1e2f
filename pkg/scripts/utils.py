"""Shared helpers for the data scripts."""

import os

import pandas as pd


def ensure_dir(path):
    """Create a directory (and parents) if needed; return it."""
    os.makedirs(path, exist_ok=True)
    return path


def export_csv(filename, rows):
    """Write rows (list of dicts) to a CSV file."""
    if not rows:
        print("No data to export.")
        return
    pd.DataFrame(rows).to_csv(filename, index=False, lineterminator="\n")


def report_saved(paths):
    for path in paths:
        print(f"Saved: {path}")
