"""
Inference Module

Turns a canvas image into the 32 identified tooth boxes. Identification is
positional: regression slot i always reports tooth ToothId.from_position(i),
so every tooth is reported exactly once whether or not it is present.
"""

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from toothnet.canvas import from_canvas_box, preprocess_image
from toothnet.constants import NUM_COORDS, NUM_TEETH
from toothnet.errors import AnnotationError, ShapeError, ValidationError
from toothnet.geometry import Box, Point2, ToothId, box_from_prediction
from toothnet.networks import image_tensor
from toothnet.scene_io import annotation_document, parse_document, read_json, write_json
from toothnet.tensor import no_grad

logger = logging.getLogger(__name__)

MIN_FPS_IMAGES = 10


@dataclass(frozen=True)
class Detection:
    tooth: ToothId
    stage1_center: Point2
    refined_center: Point2
    box: Box


class DetectionResult:
    """Exactly one Detection per tooth id, ordered by id."""

    def __init__(self, detections):
        detections = sorted(detections, key=lambda d: d.tooth.index)
        if [d.tooth.index for d in detections] != list(range(1, NUM_TEETH + 1)):
            raise ShapeError(f"a detection result needs exactly one entry per tooth id 1..{NUM_TEETH}")
        self.detections = tuple(detections)

    def __iter__(self):
        return iter(self.detections)

    def __len__(self):
        return len(self.detections)

    def __eq__(self, other):
        if not isinstance(other, DetectionResult):
            return NotImplemented
        return self.detections == other.detections

    def detection(self, tooth):
        return self.detections[tooth.index - 1]

    def boxes(self):
        return [d.box for d in self.detections]

    def ids(self):
        return [d.tooth for d in self.detections]

    @property
    def clamped_count(self):
        return sum(d.box.clamped for d in self.detections)

    def map_boxes(self, transform):
        """New result with transform applied to every box and center."""
        mapped = []
        for d in self.detections:
            stage1 = transform(Box(d.stage1_center.x, d.stage1_center.y, 1.0, 1.0)).center
            refined = transform(Box(d.refined_center.x, d.refined_center.y, 1.0, 1.0)).center
            mapped.append(Detection(d.tooth, stage1, refined, transform(d.box)))
        return DetectionResult(mapped)


def assemble_result(centers, offsets, sizes, use_offset=True):
    """Build a DetectionResult from 64 centers and [32,2] offsets / sizes (pixels)."""
    centers = np.asarray(centers, dtype=np.float64).reshape(NUM_TEETH, 2)
    offsets = np.asarray(offsets, dtype=np.float64).reshape(NUM_TEETH, 2)
    sizes = np.asarray(sizes, dtype=np.float64).reshape(NUM_TEETH, 2)
    if not use_offset:
        offsets = np.zeros_like(offsets)
    detections = []
    for position in range(NUM_TEETH):
        center = Point2(float(centers[position, 0]), float(centers[position, 1]))
        box = box_from_prediction(center, offsets[position], sizes[position])
        detections.append(Detection(ToothId.from_position(position), center, box.center, box))
    return DetectionResult(detections)


def infer(image, pipeline):
    """Detect all 32 teeth on a canvas-sized image."""
    with no_grad():
        centers, offsets, sizes = pipeline.forward(image_tensor(image, pipeline.config))
    values = centers.values.reshape(NUM_COORDS)
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(offsets.values)) and np.all(np.isfinite(sizes.values))):
        raise ValidationError("network produced non-finite outputs")
    return assemble_result(values, offsets.values, sizes.values, pipeline.use_offset)


def infer_source(image, pipeline):
    """
    Detect teeth on an image of any size.

    The image is placed on the canvas, equalized, detected, and the boxes
    are mapped back to source pixel coordinates.

    Returns:
        (DetectionResult in source coordinates, CanvasRecord)
    """
    cfg = pipeline.config
    canvas, record = preprocess_image(image, cfg.canvas_width, cfg.canvas_height,
                                      cfg.clahe_clip_limit, cfg.clahe_tiles_x, cfg.clahe_tiles_y)
    result = infer(canvas, pipeline)
    return result.map_boxes(lambda box: from_canvas_box(box, record)), record


def measure_fps(pipeline, images, warmup=3):
    """
    Inference throughput in frames per second.

    The first `warmup` images are run once untimed; the timed pass covers
    every image in the list.
    """
    images = list(images)
    if len(images) < MIN_FPS_IMAGES:
        raise ValidationError(f"measure_fps needs at least {MIN_FPS_IMAGES} images, got {len(images)}")
    for image in images[:max(0, warmup)]:
        infer(image, pipeline)
    start = time.perf_counter()
    for image in images:
        infer(image, pipeline)
    elapsed = time.perf_counter() - start
    return len(images) / max(elapsed, 1e-9)


def export_detections(result, path, image_path, width, height):
    """Write detections in the annotation schema, marked "predicted": true."""
    entries = []
    for d in result:
        entry = {"id": d.tooth.index, "present": True, "cx": d.box.cx, "cy": d.box.cy,
                 "w": d.box.w, "h": d.box.h, "predicted": True,
                 "stage1_cx": d.stage1_center.x, "stage1_cy": d.stage1_center.y}
        entries.append(entry)
    write_json(path, annotation_document(entries, str(image_path), width, height, predicted=True))


def load_detections(path):
    """Read an exported detection file back into a DetectionResult."""
    path = Path(path)
    document = read_json(path)
    _, _, _, teeth = parse_document(document, path, check_bounds=False)
    if not document.get("predicted", False):
        raise AnnotationError("not a prediction file (missing \"predicted\": true)", path=path, field="predicted")
    raw = {entry["id"]: entry for entry in document["teeth"]}
    detections = []
    for annotation in teeth:
        entry = raw[annotation.tooth.index]
        box = annotation.box
        stage1 = Point2(float(entry.get("stage1_cx", box.cx)), float(entry.get("stage1_cy", box.cy)))
        detections.append(Detection(annotation.tooth, stage1, box.center, box))
    return DetectionResult(detections)
