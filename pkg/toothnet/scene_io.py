"""
Scene I/O Module

Annotation files, dataset directories and split manifests.

Annotation file (UTF-8 JSON):
    {"version": 1, "image": "<path relative to this file>",
     "width": 768, "height": 512,
     "teeth": [{"id": 1, "present": true, "cx": ..., "cy": ..., "w": ..., "h": ...}, x32]}

Exported detections use the same schema with "predicted": true on the
document and on every tooth entry.

Dataset directory:
    images/<stem>.png
    annotations/<stem>.json
    manifest.csv  (columns: stem, split)
"""

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from toothnet.constants import ANNOTATION_VERSION, DATASET_MANIFEST, NUM_TEETH, SPLIT_NAMES, SPLIT_WEIGHTS
from toothnet.errors import AnnotationError, DatasetError, DatasetIOError, ShapeError
from toothnet.geometry import Box, ToothId
from toothnet.scene import Scene, ToothAnnotation, box_in_bounds
from Utility.image_io import load_gray, save_gray

logger = logging.getLogger(__name__)

TOOTH_FIELDS = ("id", "present", "cx", "cy", "w", "h")


def tooth_entry(tooth, present, box, predicted=False):
    entry = {"id": tooth.index, "present": bool(present), "cx": box.cx, "cy": box.cy, "w": box.w, "h": box.h}
    if predicted:
        entry["predicted"] = True
    return entry


def annotation_document(entries, image_path, width, height, predicted=False):
    document = {
        "version": ANNOTATION_VERSION,
        "image": image_path,
        "width": int(width),
        "height": int(height),
        "teeth": entries,
    }
    if predicted:
        document["predicted"] = True
    return document


def write_json(path, document):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document, indent=2), encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(path, e) from e


def read_json(path):
    """Parse a JSON file, reporting syntax errors with their line number."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(path, e) from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise AnnotationError(f"malformed JSON: {e.msg}", path=path, line=e.lineno) from e


def _number(entry, key, index, path):
    value = entry[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
        raise AnnotationError("expected a finite number", path=path, field=f"teeth[{index}].{key}")
    return float(value)


def parse_document(document, path, check_bounds=True):
    """
    Validate an annotation document.

    Returns:
        (image path string, width, height, list of ToothAnnotation ordered by id)
    """
    if not isinstance(document, dict):
        raise AnnotationError("annotation must be a JSON object", path=path)
    for key in ("version", "image", "width", "height", "teeth"):
        if key not in document:
            raise AnnotationError("missing field", path=path, field=key)
    if document["version"] != ANNOTATION_VERSION:
        raise AnnotationError(f"unsupported version {document['version']!r}", path=path, field="version")
    if not isinstance(document["image"], str):
        raise AnnotationError("image must be a relative path string", path=path, field="image")
    width, height = document["width"], document["height"]
    for key, value in (("width", width), ("height", height)):
        if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
            raise AnnotationError("expected a positive integer", path=path, field=key)
    entries = document["teeth"]
    if not isinstance(entries, list):
        raise AnnotationError("teeth must be a list", path=path, field="teeth")
    if len(entries) != NUM_TEETH:
        raise AnnotationError(f"expected {NUM_TEETH} teeth, got {len(entries)}", path=path, field="teeth")

    teeth = {}
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise AnnotationError("tooth entry must be an object", path=path, field=f"teeth[{i}]")
        for key in TOOTH_FIELDS:
            if key not in entry:
                raise AnnotationError("missing field", path=path, field=f"teeth[{i}].{key}")
        index = entry["id"]
        if isinstance(index, bool) or not isinstance(index, int) or not 1 <= index <= NUM_TEETH:
            raise AnnotationError(f"tooth id {index!r} out of range 1..{NUM_TEETH}", path=path,
                                  field=f"teeth[{i}].id")
        if index in teeth:
            raise AnnotationError(f"duplicate tooth id {index}", path=path, field=f"teeth[{i}].id")
        if not isinstance(entry["present"], bool):
            raise AnnotationError("present must be true or false", path=path, field=f"teeth[{i}].present")
        cx, cy, w, h = (_number(entry, key, i, path) for key in ("cx", "cy", "w", "h"))
        try:
            box = Box(cx, cy, w, h)
        except ShapeError as e:
            raise AnnotationError(str(e), path=path, field=f"teeth[{i}]") from e
        if check_bounds and not box_in_bounds(box, width, height):
            raise AnnotationError(f"box leaves the {width}x{height} image", path=path, field=f"teeth[{i}]")
        teeth[index] = ToothAnnotation(ToothId(index), entry["present"], box)
    return document["image"], width, height, [teeth[i] for i in sorted(teeth)]


def _relative_image_path(image_path, annotation_path):
    return Path(os.path.relpath(Path(image_path).resolve(), Path(annotation_path).resolve().parent)).as_posix()


def save_scene(scene, path, image_path=None):
    """
    Write the image (PNG) and its annotation file.

    Args:
        scene: Scene to store
        path: Annotation file path
        image_path: Image file path (default: the annotation path with .png)
    """
    path = Path(path)
    image_path = Path(image_path) if image_path is not None else path.with_suffix(".png")
    try:
        save_gray(scene.image, image_path)
    except Exception as e:
        raise DatasetIOError(image_path, e) from e
    entries = [tooth_entry(a.tooth, a.present, a.box) for a in scene.teeth]
    write_json(path, annotation_document(entries, _relative_image_path(image_path, path), scene.width, scene.height))


def load_image(path):
    path = Path(path)
    if not path.is_file():
        raise DatasetIOError(path, "image file not found")
    try:
        return load_gray(path)
    except Exception as e:
        raise DatasetIOError(path, e) from e


def load_scene(path):
    """Read an annotation file and the image it references."""
    path = Path(path)
    image_ref, width, height, teeth = parse_document(read_json(path), path)
    image = load_image(path.parent / image_ref)
    if image.shape != (height, width):
        raise AnnotationError(
            f"image is {image.shape[1]}x{image.shape[0]}, annotation says {width}x{height}",
            path=path, field="width",
        )
    return Scene(image, teeth)


def split_counts(total, weights=SPLIT_WEIGHTS):
    """Largest-remainder allocation of total items over the split weights."""
    names = list(weights)
    shares = np.array([weights[name] for name in names], dtype=np.float64)
    quotas = total * shares / shares.sum()
    counts = np.floor(quotas).astype(int)
    remainders = quotas - counts
    order = sorted(range(len(names)), key=lambda i: (-remainders[i], i))
    for i in order[:total - counts.sum()]:
        counts[i] += 1
    return {name: int(count) for name, count in zip(names, counts)}


def assign_splits(total, seed, weights=SPLIT_WEIGHTS):
    """Split name per item index, drawn by a seeded permutation."""
    counts = split_counts(total, weights)
    labels = np.empty(total, dtype=object)
    permutation = np.random.default_rng(seed).permutation(total)
    start = 0
    for name, count in counts.items():
        labels[permutation[start:start + count]] = name
        start += count
    return list(labels)


@dataclass(frozen=True)
class DatasetLayout:
    root: Path

    @property
    def image_dir(self):
        return self.root / "images"

    @property
    def annotation_dir(self):
        return self.root / "annotations"

    @property
    def manifest_path(self):
        return self.root / DATASET_MANIFEST

    def image_path(self, stem):
        return self.image_dir / f"{stem}.png"

    def annotation_path(self, stem):
        return self.annotation_dir / f"{stem}.json"

    def create(self):
        try:
            self.image_dir.mkdir(parents=True, exist_ok=True)
            self.annotation_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise DatasetIOError(self.root, e) from e


def write_dataset_manifest(root, stems, splits):
    manifest = pd.DataFrame({"stem": list(stems), "split": list(splits)})
    path = DatasetLayout(Path(root)).manifest_path
    try:
        manifest.to_csv(path, index=False)
    except OSError as e:
        raise DatasetIOError(path, e) from e
    return manifest


def read_dataset_manifest(root):
    path = DatasetLayout(Path(root)).manifest_path
    if not path.is_file():
        raise DatasetError(f"no dataset manifest at {path}")
    try:
        manifest = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DatasetError(f"unreadable dataset manifest {path}: {e}") from e
    if list(manifest.columns) != ["stem", "split"]:
        raise DatasetError(f"manifest {path} must have columns stem, split")
    unknown = set(manifest["split"]) - set(SPLIT_NAMES)
    if unknown:
        raise DatasetError(f"manifest {path} names unknown splits {sorted(unknown)}")
    return manifest


class Dataset:
    """A dataset directory opened through its manifest."""

    def __init__(self, root):
        self.layout = DatasetLayout(Path(root))
        self.manifest = read_dataset_manifest(self.layout.root)
        self._cache = {}

    @property
    def root(self):
        return self.layout.root

    def stems(self, split=None):
        if split is None:
            return list(self.manifest["stem"])
        if split not in SPLIT_NAMES:
            raise DatasetError(f"unknown split '{split}' (expected one of {SPLIT_NAMES})")
        return list(self.manifest.loc[self.manifest["split"] == split, "stem"])

    def load(self, stem):
        if stem not in self._cache:
            self._cache[stem] = load_scene(self.layout.annotation_path(stem))
        return self._cache[stem]

    def scenes(self, split):
        return [self.load(stem) for stem in self.stems(split)]

    def __len__(self):
        return len(self.manifest)
