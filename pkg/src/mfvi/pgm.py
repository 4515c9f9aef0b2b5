"""Dependency-free PGM (P5, maxval 255) image export and simple grids."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import InvalidInputError


def write_pgm(path, image) -> None:
    """Write a [0, 1] grayscale image as binary PGM; values are clamped."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise InvalidInputError("PGM export expects a 2-D image")
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    match = re.match(rb"P5\s+(\d+)\s+(\d+)\s+255\s", raw)
    if not match:
        raise InvalidInputError(f"{path}: not a maxval-255 P5 PGM file")
    w, h = int(match.group(1)), int(match.group(2))
    pixels = np.frombuffer(raw[match.end() : match.end() + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise InvalidInputError(f"{path}: truncated PGM pixel data")
    return pixels.reshape(h, w).astype(np.float64) / 255.0


def image_grid(panels, pad: int = 2, pad_value: float = 0.25) -> np.ndarray:
    """Stack a list of rows of equal-shape images into one canvas.

    ``panels`` is a list (rows) of lists (columns) of 2-D arrays.
    """
    if not panels or not panels[0]:
        raise InvalidInputError("image grid needs at least one panel")
    h, w = np.asarray(panels[0][0]).shape
    n_rows, n_cols = len(panels), max(len(row) for row in panels)
    canvas = np.full(
        (n_rows * h + (n_rows + 1) * pad, n_cols * w + (n_cols + 1) * pad), pad_value
    )
    for r, row in enumerate(panels):
        for c, img in enumerate(row):
            img = np.asarray(img)
            if img.shape != (h, w):
                raise InvalidInputError("all grid panels must share one shape")
            y = pad + r * (h + pad)
            x = pad + c * (w + pad)
            canvas[y : y + h, x : x + w] = np.clip(img, 0.0, 1.0)
    return canvas
