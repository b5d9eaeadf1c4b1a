"""
Geometry Module

Value types and arithmetic shared by the losses, the pipeline and the
evaluation code. It provides:
- Point2 and Box (center + size form)
- ToothId with the universal 1..32 numbering
- PointSet32: the ordered 32-point layout and its 64-float flattening
- iou, offset_target, neighbor_distances, box_from_prediction

Tooth numbering:
- Upper arch slot s (0..15, left to right in the image) is tooth s + 1
- Lower arch slot s (0..15, left to right in the image) is tooth 32 - s

Ordering is in image coordinates; no patient-side mirroring is applied.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from toothnet.constants import MIN_BOX_EXTENT, NUM_COORDS, NUM_TEETH, TEETH_PER_ARCH
from toothnet.errors import ShapeError

logger = logging.getLogger(__name__)

UPPER = "upper"
LOWER = "lower"


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ShapeError(f"point coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class Box:
    """
    Axis-aligned box stored as center and size.

    Attributes:
        cx, cy: center in pixels
        w, h: positive extents in pixels
        clamped: set when a degenerate predicted size was clamped
    """

    cx: float
    cy: float
    w: float
    h: float
    clamped: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ShapeError(f"box extents must be positive, got {self.w} x {self.h}")

    @property
    def center(self):
        return Point2(self.cx, self.cy)

    def corners(self):
        """(x0, y0, x1, y1)"""
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    @property
    def area(self):
        return self.w * self.h

    def as_array(self):
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)


@dataclass(frozen=True)
class ToothId:
    index: int

    def __post_init__(self):
        if not (isinstance(self.index, (int, np.integer)) and 1 <= self.index <= NUM_TEETH):
            raise ShapeError(f"tooth index must be in 1..{NUM_TEETH}, got {self.index}")

    @property
    def arch(self):
        return UPPER if self.index <= TEETH_PER_ARCH else LOWER

    @property
    def slot(self):
        if self.arch == UPPER:
            return self.index - 1
        return NUM_TEETH - self.index

    @property
    def position(self):
        """Position of this tooth in PointSet32 order (0..31)."""
        return self.slot if self.arch == UPPER else TEETH_PER_ARCH + self.slot

    @classmethod
    def from_slot(cls, arch, slot):
        if not 0 <= slot < TEETH_PER_ARCH:
            raise ShapeError(f"slot must be in 0..{TEETH_PER_ARCH - 1}, got {slot}")
        if arch == UPPER:
            return cls(slot + 1)
        if arch == LOWER:
            return cls(NUM_TEETH - slot)
        raise ShapeError(f"unknown arch '{arch}'")

    @classmethod
    def from_position(cls, position):
        if position < TEETH_PER_ARCH:
            return cls.from_slot(UPPER, position)
        return cls.from_slot(LOWER, position - TEETH_PER_ARCH)


def all_teeth():
    return [ToothId(i) for i in range(1, NUM_TEETH + 1)]


@dataclass(frozen=True)
class PointSet32:
    """
    The 32 tooth centers in regression order.

    upper holds u_0..u_15 and lower holds l_0..l_15, each left to right.
    Flattening interleaves coordinates: [u0x, u0y, u1x, ..., l15x, l15y].
    """

    upper: tuple
    lower: tuple

    def __post_init__(self):
        if len(self.upper) != TEETH_PER_ARCH or len(self.lower) != TEETH_PER_ARCH:
            raise ShapeError("a point set needs exactly 16 upper and 16 lower points")

    def flatten(self):
        coords = [(p.x, p.y) for p in self.upper + self.lower]
        return np.array(coords, dtype=np.float64).reshape(NUM_COORDS)

    def as_array(self):
        """[32, 2] array in flattening order."""
        return self.flatten().reshape(NUM_TEETH, 2)

    @classmethod
    def from_flat(cls, values):
        values = np.asarray(values, dtype=np.float64)
        if values.size != NUM_COORDS:
            raise ShapeError(f"expected {NUM_COORDS} coordinates, got {values.size}")
        points = [Point2(float(x), float(y)) for x, y in values.reshape(NUM_TEETH, 2)]
        return cls(tuple(points[:TEETH_PER_ARCH]), tuple(points[TEETH_PER_ARCH:]))

    def point(self, tooth):
        return (self.upper + self.lower)[tooth.position]


def iou(a, b):
    """Intersection over union of two boxes, in [0, 1]."""
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    inter_w = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    inter_h = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = inter_w * inter_h
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def iou_matrix(boxes_a, boxes_b):
    """
    Pairwise IoU of two [N,4] / [M,4] arrays of (cx, cy, w, h) rows.

    Uses the same arithmetic as iou(), element for element.
    """
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)), dtype=np.float64)
    a0 = a[:, :2] - a[:, 2:] / 2
    a1 = a[:, :2] + a[:, 2:] / 2
    b0 = b[:, :2] - b[:, 2:] / 2
    b1 = b[:, :2] + b[:, 2:] / 2
    lo = np.maximum(a0[:, None, :], b0[None, :, :])
    hi = np.minimum(a1[:, None, :], b1[None, :, :])
    span = np.maximum(0.0, hi - lo)
    inter = span[..., 0] * span[..., 1]
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    safe = np.where(union > 0.0, union, 1.0)
    return np.where(union > 0.0, np.minimum(1.0, inter / safe), 0.0)


def offset_target(estimated, ground_truth):
    """Ground-truth offset: ground_truth - estimated, as 64 floats."""
    return ground_truth.flatten() - estimated.flatten()


def neighbor_distances(arch):
    """Euclidean distances between consecutive points of one 16-point arch."""
    points = np.array([(p.x, p.y) for p in arch], dtype=np.float64)
    if len(points) != TEETH_PER_ARCH:
        raise ShapeError(f"an arch has {TEETH_PER_ARCH} points, got {len(points)}")
    return np.sqrt(((points[1:] - points[:-1]) ** 2).sum(axis=1))


def box_from_prediction(center, offset, size):
    """
    Build the final box from a stage-1 center, a stage-2 offset and size.

    Non-positive (or tiny) predicted extents are clamped to MIN_BOX_EXTENT;
    the returned box then carries clamped=True and a warning is logged.
    """
    w, h = float(size[0]), float(size[1])
    clamped = False
    if not w > MIN_BOX_EXTENT or not h > MIN_BOX_EXTENT:
        logger.warning("predicted box size (%.4f, %.4f) clamped to %.0e", w, h, MIN_BOX_EXTENT)
        w = w if w > MIN_BOX_EXTENT else MIN_BOX_EXTENT
        h = h if h > MIN_BOX_EXTENT else MIN_BOX_EXTENT
        clamped = True
    return Box(center.x + float(offset[0]), center.y + float(offset[1]), w, h, clamped=clamped)
