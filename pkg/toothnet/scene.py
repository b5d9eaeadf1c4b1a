"""
Scene Module

A canvas image together with the annotation of all 32 teeth. Teeth that
are absent still carry a box at their anatomical position.
"""

from dataclasses import dataclass

import numpy as np

from toothnet.clahe import as_gray_image
from toothnet.constants import NUM_COORDS, NUM_TEETH, TEETH_PER_ARCH
from toothnet.errors import ShapeError
from toothnet.geometry import Box, PointSet32, ToothId

# Bounds are checked at 0 px; the only slack is a few ulps of the canvas
# extent, absorbing the rounding of center/size <-> corner conversions.
BOUNDS_ULPS = 4


@dataclass(frozen=True)
class ToothAnnotation:
    tooth: ToothId
    present: bool
    box: Box


def box_in_bounds(box, width, height):
    x0, y0, x1, y1 = box.corners()
    slack = BOUNDS_ULPS * float(np.spacing(float(max(width, height))))
    return x0 >= -slack and y0 >= -slack and x1 <= width + slack and y1 <= height + slack


def clamp_box(box, width, height):
    """Shrink a box so that it lies inside the canvas."""
    x0, y0, x1, y1 = box.corners()
    x0, x1 = max(0.0, x0), min(float(width), x1)
    y0, y1 = max(0.0, y0), min(float(height), y1)
    return Box((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)


class Scene:
    """
    A grayscale image plus 32 tooth annotations ordered by tooth index.

    Args:
        image: 2D uint8 image (height x width)
        teeth: Iterable of ToothAnnotation, one per tooth id 1..32

    Raises:
        ShapeError: wrong tooth count, duplicated ids, or boxes leaving the image
    """

    def __init__(self, image, teeth):
        self.image = as_gray_image(image)
        teeth = sorted(teeth, key=lambda t: t.tooth.index)
        if len(teeth) != NUM_TEETH:
            raise ShapeError(f"expected {NUM_TEETH} teeth, got {len(teeth)}")
        ids = [t.tooth.index for t in teeth]
        if ids != list(range(1, NUM_TEETH + 1)):
            raise ShapeError(f"tooth ids must cover 1..{NUM_TEETH} exactly once")
        for annotation in teeth:
            if not box_in_bounds(annotation.box, self.width, self.height):
                raise ShapeError(f"box of tooth {annotation.tooth.index} leaves the {self.width}x{self.height} image")
        self.teeth = tuple(teeth)

    @property
    def width(self):
        return self.image.shape[1]

    @property
    def height(self):
        return self.image.shape[0]

    def annotation(self, tooth):
        return self.teeth[tooth.index - 1]

    def in_regression_order(self):
        """Annotations in PointSet32 order (upper left to right, then lower)."""
        ordered = [None] * NUM_TEETH
        for annotation in self.teeth:
            ordered[annotation.tooth.position] = annotation
        return ordered

    def centers(self):
        points = [a.box.center for a in self.in_regression_order()]
        return PointSet32(tuple(points[:TEETH_PER_ARCH]), tuple(points[TEETH_PER_ARCH:]))

    def sizes(self):
        """64 floats (w, h) per tooth in regression order."""
        sizes = [(a.box.w, a.box.h) for a in self.in_regression_order()]
        return np.array(sizes, dtype=np.float64).reshape(NUM_COORDS)

    def boxes(self):
        return [a.box for a in self.teeth]

    def present_teeth(self):
        return [a for a in self.teeth if a.present]

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return self.teeth == other.teeth and np.array_equal(self.image, other.image)

    def __repr__(self):
        missing = sum(not a.present for a in self.teeth)
        return f"Scene({self.width}x{self.height}, missing={missing})"


def scene_from_arrays(image, centers, sizes, present):
    """
    Build a Scene from [32,2] centers, [32,2] sizes and [32] present flags,
    all in regression order.
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(NUM_TEETH, 2)
    sizes = np.asarray(sizes, dtype=np.float64).reshape(NUM_TEETH, 2)
    teeth = []
    for position in range(NUM_TEETH):
        box = Box(float(centers[position, 0]), float(centers[position, 1]),
                  float(sizes[position, 0]), float(sizes[position, 1]))
        teeth.append(ToothAnnotation(ToothId.from_position(position), bool(present[position]), box))
    return Scene(image, teeth)
