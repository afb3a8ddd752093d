"""Overview pyramid construction.

Each level halves the previous one (ceiling division): an output cell is the
mean of the up-to-four source cells beneath it, ignoring missing values (NaN).
A cell whose entire block is missing stays missing. Levels are added until
both dimensions fit one tile.

The mean is evaluated as anchor + sum(deviations)/count, with the block's
first present cell as anchor and a fixed traversal order. That keeps the
reduction reproducible bit for bit and, because deviations of equal cells are
exactly zero, a constant region stays exactly constant at every level no
matter how nodata holes fall.
"""

from __future__ import annotations

import numpy as np

from .types import TILE_SIZE


def shrink_once(pixels: np.ndarray) -> np.ndarray:
    """One 2x block-mean reduction of a (bands, h, w) float64 array."""
    bands, h, w = pixels.shape
    out_h, out_w = (h + 1) // 2, (w + 1) // 2
    padded = np.full((bands, out_h * 2, out_w * 2), np.nan, dtype=np.float64)
    padded[:, :h, :w] = pixels
    corners = (
        padded[:, 0::2, 0::2],
        padded[:, 1::2, 0::2],
        padded[:, 0::2, 1::2],
        padded[:, 1::2, 1::2],
    )
    anchor = np.full((bands, out_h, out_w), np.nan, dtype=np.float64)
    for corner in corners:
        anchor = np.where(np.isfinite(anchor), anchor, corner)
    base = np.where(np.isfinite(anchor), anchor, 0.0)
    total = np.zeros((bands, out_h, out_w), dtype=np.float64)
    count = np.zeros((bands, out_h, out_w), dtype=np.float64)
    for corner in corners:
        present = np.isfinite(corner)
        total = total + np.where(present, corner - base, 0.0)
        count = count + present
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = base + total / count
    return np.where(count > 0, mean, np.nan)


def build_pyramid(pixels: np.ndarray, tile_size: int = TILE_SIZE) -> list[np.ndarray]:
    """Level 0 is the input itself; returns [level0, level1, ...]."""
    if pixels.ndim == 2:
        pixels = pixels[np.newaxis, :, :]
    if pixels.ndim != 3:
        raise ValueError(f"expected (bands, h, w) pixels, got shape {pixels.shape}")
    current = np.ascontiguousarray(pixels, dtype=np.float64)
    levels = [current]
    while max(current.shape[1], current.shape[2]) > tile_size:
        current = shrink_once(current)
        levels.append(current)
    return levels


def level_count(height: int, width: int, tile_size: int = TILE_SIZE) -> int:
    n = 1
    h, w = height, width
    while max(h, w) > tile_size:
        h, w = (h + 1) // 2, (w + 1) // 2
        n += 1
    return n
