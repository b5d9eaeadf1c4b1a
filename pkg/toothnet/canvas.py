"""
Canvas Module

Brings radiographs of any size onto the fixed detection canvas and maps
boxes between the two coordinate frames.

Resize policy:
- One scale factor min(W_canvas / W, H_canvas / H) keeps the aspect ratio
- Content is resized bilinearly and centred; the rest is zero padding
- Extra padding pixels (odd remainders) go to the bottom / right
"""

import logging
from dataclasses import dataclass

import numpy as np

from toothnet.clahe import as_gray_image, clahe
from toothnet.constants import CANVAS_HEIGHT, CANVAS_WIDTH, CLAHE_CLIP_LIMIT, CLAHE_TILES_X, CLAHE_TILES_Y
from toothnet.geometry import Box
from toothnet.ops import interpolation_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CanvasRecord:
    """
    How a source image was placed on the canvas.

    Attributes:
        source_width, source_height: original image size
        scale: nominal aspect-preserving scale factor
        scale_x, scale_y: effective per-axis scales after rounding the content size
        pad_x, pad_y: left / top padding in canvas pixels
    """

    source_width: int
    source_height: int
    scale: float
    scale_x: float
    scale_y: float
    pad_x: int
    pad_y: int

    @property
    def is_identity(self):
        return self.scale_x == 1.0 and self.scale_y == 1.0 and self.pad_x == 0 and self.pad_y == 0

    def to_dict(self):
        return {
            "source_width": self.source_width,
            "source_height": self.source_height,
            "scale": self.scale,
            "scale_x": self.scale_x,
            "scale_y": self.scale_y,
            "pad_x": self.pad_x,
            "pad_y": self.pad_y,
        }


def _round_half_up(value):
    return int(np.floor(value + 0.5))


def to_canvas(image, width=CANVAS_WIDTH, height=CANVAS_HEIGHT):
    """
    Resize and pad an image onto a width x height canvas.

    Returns:
        (uint8 canvas image, CanvasRecord)
    """
    img = as_gray_image(image)
    src_h, src_w = img.shape
    scale = min(width / src_w, height / src_h)
    content_w = min(width, max(1, _round_half_up(src_w * scale)))
    content_h = min(height, max(1, _round_half_up(src_h * scale)))
    pad_x = (width - content_w) // 2
    pad_y = (height - content_h) // 2

    if content_w == src_w and content_h == src_h:
        resized = img.astype(np.float64)
    else:
        rows = interpolation_matrix(src_h, content_h)
        cols = interpolation_matrix(src_w, content_w)
        resized = rows @ img.astype(np.float64) @ cols.T

    canvas = np.zeros((height, width), dtype=np.float64)
    canvas[pad_y:pad_y + content_h, pad_x:pad_x + content_w] = resized
    record = CanvasRecord(
        source_width=src_w,
        source_height=src_h,
        scale=scale,
        scale_x=content_w / src_w,
        scale_y=content_h / src_h,
        pad_x=pad_x,
        pad_y=pad_y,
    )
    if not record.is_identity:
        logger.debug("placed %dx%d image at scale %.4f, padding (%d, %d)", src_w, src_h, scale, pad_x, pad_y)
    return as_gray_image(canvas), record


def to_canvas_box(box, record):
    return Box(
        box.cx * record.scale_x + record.pad_x,
        box.cy * record.scale_y + record.pad_y,
        box.w * record.scale_x,
        box.h * record.scale_y,
        clamped=box.clamped,
    )


def from_canvas_box(box, record):
    return Box(
        (box.cx - record.pad_x) / record.scale_x,
        (box.cy - record.pad_y) / record.scale_y,
        box.w / record.scale_x,
        box.h / record.scale_y,
        clamped=box.clamped,
    )


def preprocess_image(image, width=CANVAS_WIDTH, height=CANVAS_HEIGHT,
                     clip_limit=CLAHE_CLIP_LIMIT, tiles_x=CLAHE_TILES_X, tiles_y=CLAHE_TILES_Y):
    """to_canvas followed by CLAHE; returns (canvas image, CanvasRecord)."""
    canvas, record = to_canvas(image, width, height)
    return clahe(canvas, clip_limit, tiles_x, tiles_y), record
