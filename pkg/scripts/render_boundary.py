#!/usr/bin/env python3
"""Render a boundary-grid CSV (x1,x2,pred) to an image.

Usage: render_boundary.py GRID_CSV [OUT_IMAGE]

Writes a PNG when matplotlib is importable, otherwise a plain PPM.
"""
import csv
import sys
from pathlib import Path

import numpy as np


def load_grid(path):
    xs, ys, preds = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["x1", "x2", "pred"]:
            raise SystemExit("not a boundary grid CSV: %s" % path)
        for row in reader:
            xs.append(float(row[0]))
            ys.append(float(row[1]))
            preds.append(int(row[2]))
    xs, ys, preds = np.array(xs), np.array(ys), np.array(preds)
    ux, uy = np.unique(xs), np.unique(ys)
    grid = preds.reshape(len(uy), len(ux))
    return ux, uy, grid


def write_ppm(path, grid):
    colors = np.array([[69, 117, 180], [215, 48, 39], [26, 152, 80],
                       [255, 186, 0]], dtype=np.uint8)
    img = colors[np.clip(grid[::-1], 0, len(colors) - 1)]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(img.tobytes())


def main(argv):
    if len(argv) < 2:
        print(__doc__)
        return 2
    src = Path(argv[1])
    ux, uy, grid = load_grid(src)
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        out = Path(argv[2]) if len(argv) > 2 else src.with_suffix(".ppm")
        write_ppm(out, grid)
        print("wrote %s" % out)
        return 0
    out = Path(argv[2]) if len(argv) > 2 else src.with_suffix(".png")
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.pcolormesh(ux, uy, grid, cmap="coolwarm", shading="auto")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print("wrote %s" % out)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
