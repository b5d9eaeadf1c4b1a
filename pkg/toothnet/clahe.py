"""
CLAHE Module

Contrast limited adaptive histogram equalization, applied to every
radiograph before detection so that images from different machines share
one contrast range.

Algorithm:
- The image is cut into tiles_x by tiles_y tiles (edges at floor(i * H / tiles))
- Each tile histogram is clipped at max(1, floor(clip_limit * area / 256))
- The clipped excess is spread evenly over all 256 bins, the remainder at a stride
- Each tile gets a lookup table floor(cdf * 255 / area)
- Every pixel blends the tables of the four nearest tile centres bilinearly
"""

import numpy as np

from toothnet.constants import CLAHE_CLIP_LIMIT, CLAHE_MIN_TILE, CLAHE_TILES_X, CLAHE_TILES_Y, GRAY_LEVELS
from toothnet.errors import ShapeError


def as_gray_image(image):
    """Validate a 2D image and return it as uint8 (0..255)."""
    values = np.asarray(image)
    if values.ndim != 2 or values.size == 0:
        raise ShapeError(f"expected a non-empty 2D grayscale image, got shape {values.shape}")
    if values.dtype == np.uint8:
        return values
    return np.clip(np.rint(values), 0, GRAY_LEVELS - 1).astype(np.uint8)


def tile_edges(extent, tiles):
    return (np.arange(tiles + 1) * extent) // tiles


def clip_histogram(hist, clip_limit, area):
    """Clip a 256-bin histogram and redistribute the excess; the total is preserved."""
    if clip_limit <= 0:
        return hist
    clip = max(1, int(clip_limit * area / GRAY_LEVELS))
    excess = int(np.maximum(hist - clip, 0).sum())
    hist = np.minimum(hist, clip)
    if excess:
        per_bin, residual = divmod(excess, GRAY_LEVELS)
        hist = hist + per_bin
        if residual:
            stride = max(GRAY_LEVELS // residual, 1)
            hist[:residual * stride:stride] += 1
    return hist


def tile_lut(tile, clip_limit):
    area = tile.size
    hist = np.bincount(tile.ravel(), minlength=GRAY_LEVELS).astype(np.int64)
    hist = clip_histogram(hist, clip_limit, area)
    return (np.cumsum(hist) * (GRAY_LEVELS - 1)) // area


def _blend_axis(extent, tiles):
    position = (np.arange(extent) + 0.5) * tiles / extent - 0.5
    position = np.clip(position, 0.0, tiles - 1)
    low = np.floor(position).astype(int)
    high = np.minimum(low + 1, tiles - 1)
    return low, high, position - low


def clahe(image, clip_limit=CLAHE_CLIP_LIMIT, tiles_x=CLAHE_TILES_X, tiles_y=CLAHE_TILES_Y):
    """
    Equalize a grayscale image tile by tile.

    Args:
        image: 2D array, values 0..255
        clip_limit: Histogram clip in units of the mean bin count (<= 0 disables clipping)
        tiles_x: Tile columns
        tiles_y: Tile rows

    Returns:
        uint8 image of the same shape

    Raises:
        ShapeError: when a tile would be smaller than 8x8 pixels
    """
    img = as_gray_image(image)
    h, w = img.shape
    if tiles_x < 1 or tiles_y < 1:
        raise ShapeError(f"tile counts must be positive, got {tiles_x}x{tiles_y}")
    ys, xs = tile_edges(h, tiles_y), tile_edges(w, tiles_x)
    if np.diff(ys).min() < CLAHE_MIN_TILE or np.diff(xs).min() < CLAHE_MIN_TILE:
        raise ShapeError(
            f"{w}x{h} image cannot be cut into {tiles_x}x{tiles_y} tiles of at least "
            f"{CLAHE_MIN_TILE}x{CLAHE_MIN_TILE} pixels"
        )

    luts = np.empty((tiles_y, tiles_x, GRAY_LEVELS), dtype=np.float64)
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            luts[ty, tx] = tile_lut(img[ys[ty]:ys[ty + 1], xs[tx]:xs[tx + 1]], clip_limit)

    y0, y1, wy = _blend_axis(h, tiles_y)
    x0, x1, wx = _blend_axis(w, tiles_x)
    rows0, rows1 = y0[:, None], y1[:, None]
    cols0, cols1 = x0[None, :], x1[None, :]
    wx = wx[None, :]
    wy = wy[:, None]
    top = (1.0 - wx) * luts[rows0, cols0, img] + wx * luts[rows0, cols1, img]
    bottom = (1.0 - wx) * luts[rows1, cols0, img] + wx * luts[rows1, cols1, img]
    blended = (1.0 - wy) * top + wy * bottom
    return np.clip(np.floor(blended + 0.5), 0, GRAY_LEVELS - 1).astype(np.uint8)
