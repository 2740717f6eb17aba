#!/usr/bin/env python3
"""Render a scaled jacobian heat map (PGM or CSV of bytes) as a colored image.

Usage:
    render_heatmap.py --in game1_relu_vs_mean_pool.pgm --out hm.png
"""

from __future__ import annotations

import argparse
import csv
import sys
import warnings
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_matrix(path: str) -> np.ndarray:
    data = Path(path).read_bytes()
    if data.startswith(b"P5"):
        return _read_pgm(data, path)
    with open(path, newline="") as fh:
        rows = [[int(v) for v in row] for row in csv.reader(fh) if row]
    if not rows:
        raise ValueError(f"{path}: empty matrix")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: ragged rows")
    return np.asarray(rows, dtype=np.uint8)


def _read_pgm(data: bytes, path: str) -> np.ndarray:
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    cols, rows, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    pos += 1
    pixels = np.frombuffer(data[pos:pos + rows * cols], dtype=np.uint8)
    if pixels.size != rows * cols:
        raise ValueError(f"{path}: truncated PGM payload")
    return pixels.reshape(rows, cols)


def render_heatmap(in_path: str, out_image: str) -> None:
    matrix = read_matrix(in_path)
    if matrix.max() == matrix.min():
        warnings.warn(f"{in_path}: constant heat map, image will be uniform")
    fig, ax = plt.subplots(figsize=(max(4, matrix.shape[1] / 18),
                                    max(3, matrix.shape[0] / 18)))
    im = ax.imshow(matrix, cmap="viridis", vmin=0, vmax=255, aspect="equal")
    ax.set_title(Path(in_path).stem.replace("_", " "))
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(out_image, dpi=120)
    plt.close(fig)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--in", dest="in_path", required=True,
                        help="PGM file or CSV of 0..255 bytes")
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        render_heatmap(args.in_path, args.out)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
