"""
Synthetic Scene Module

Parametric generator of panoramic-looking scenes with exact 32-tooth
annotations. It provides:
- SynthConfig: seed, missing-tooth probability and perturbation sizes
- sample_layout: arch geometry, boxes and presence flags of one scene
- render_layout: the grayscale image for a layout
- synthesize_scene: both of the above, keyed by (seed, index)
- synthesize_dataset: a whole dataset directory with a split manifest

Scene model:
- Each arch is a parabola y = level - a * (x - x0)^2 (ends curve upward)
- 16 teeth per arch placed by cumulative slot widths (molars wide,
  incisors narrow), so neighbor distances vary smoothly
- The whole layout is rotated by at most 3 degrees
- Teeth are superellipse blobs with per-tooth intensity over an
  illuminated background plus Gaussian noise
- Absent teeth are not drawn but keep their annotated box
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from tqdm import tqdm

from toothnet.constants import CANVAS_HEIGHT, CANVAS_WIDTH, NUM_TEETH, TEETH_PER_ARCH
from toothnet.errors import ConfigError
from toothnet.geometry import Box
from toothnet.scene import Scene, clamp_box, scene_from_arrays
from toothnet.scene_io import DatasetLayout, assign_splits, save_scene, write_dataset_manifest

logger = logging.getLogger(__name__)

# Slot extents in pixels on the 768x512 canvas, left to right:
# 3rd/2nd/1st molar, 2nd/1st premolar, canine, lateral/central incisor, mirrored.
UPPER_SLOT_WIDTHS = np.array([38, 42, 46, 32, 32, 34, 28, 36, 36, 28, 34, 32, 32, 46, 42, 38], dtype=np.float64)
LOWER_SLOT_WIDTHS = np.array([40, 44, 48, 32, 32, 30, 24, 22, 22, 24, 30, 32, 32, 48, 44, 40], dtype=np.float64)
UPPER_SLOT_HEIGHTS = np.array([68, 72, 74, 78, 80, 90, 82, 86, 86, 82, 90, 80, 78, 74, 72, 68], dtype=np.float64)
LOWER_SLOT_HEIGHTS = np.array([64, 68, 70, 74, 76, 86, 76, 74, 74, 76, 86, 76, 74, 70, 68, 64], dtype=np.float64)

SPAN_SCALE = 0.85
SLOT_GAP = 2.0
BOX_FILL = 0.95
UPPER_LEVEL = 0.40
ARCH_SEPARATION = 0.22
CURVATURE = 4.5e-4
MAX_ROTATION_DEG = 3.0

BLOB_EXPONENT = 2.5
BACKGROUND_LEVEL = 55.0
BONE_LEVEL = 30.0
ILLUMINATION = 30.0
TOOTH_LEVEL = 175.0
TOOTH_SPREAD = 25.0


@dataclass
class SynthConfig:
    """
    Attributes:
        seed: Base seed; scene i uses the generator seeded with (seed, i)
        missing_probability: Chance that each tooth is absent
        arch_jitter: Scale of arch position / curvature / rotation perturbations
        size_jitter: Scale of tooth size perturbations
        contrast_jitter: Scale of intensity and illumination perturbations
        noise_level: Sigma of additive Gaussian noise (gray levels)
        width, height: Canvas size
    """

    seed: int = 0
    missing_probability: float = 0.15
    arch_jitter: float = 1.0
    size_jitter: float = 1.0
    contrast_jitter: float = 1.0
    noise_level: float = 4.0
    width: int = CANVAS_WIDTH
    height: int = CANVAS_HEIGHT

    def __post_init__(self):
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if not 0.0 <= self.missing_probability <= 1.0:
            raise ConfigError(f"missing_probability must be in [0, 1], got {self.missing_probability}")
        for name in ("arch_jitter", "size_jitter", "contrast_jitter", "noise_level"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.width < 64 or self.height < 32:
            raise ConfigError(f"canvas {self.width}x{self.height} is too small for a scene")


@dataclass
class Layout:
    """Centers [32,2], sizes [32,2] and present flags [32], in regression order."""

    centers: np.ndarray
    sizes: np.ndarray
    present: np.ndarray


def _arch_points(slot_widths, slot_heights, level, x0, scale, curvature, width_noise, height_noise):
    widths = slot_widths * scale * (1.0 + width_noise)
    steps = (widths[:-1] + widths[1:]) / 2 + SLOT_GAP * scale
    xs = np.concatenate([[0.0], np.cumsum(steps)])
    xs = xs - (xs[0] + xs[-1]) / 2
    ys = level - curvature * xs ** 2
    heights = slot_heights * (1.0 + height_noise)
    return np.stack([xs + x0, ys], axis=1), np.stack([widths * BOX_FILL, heights], axis=1)


def _layout(width, height, x0, upper_level, separation, scale, curvature, angle_deg,
            width_noise, height_noise):
    """Arch geometry on the nominal canvas, rotated, then mapped to width x height."""
    upper_c, upper_s = _arch_points(UPPER_SLOT_WIDTHS, UPPER_SLOT_HEIGHTS, upper_level, x0, scale, curvature,
                                    width_noise[:TEETH_PER_ARCH], height_noise[:TEETH_PER_ARCH])
    lower_c, lower_s = _arch_points(LOWER_SLOT_WIDTHS, LOWER_SLOT_HEIGHTS, upper_level + separation, x0, scale,
                                    curvature, width_noise[TEETH_PER_ARCH:], height_noise[TEETH_PER_ARCH:])
    centers = np.concatenate([upper_c, lower_c])
    sizes = np.concatenate([upper_s, lower_s])

    theta = np.deg2rad(angle_deg)
    pivot = np.array([x0, upper_level + separation / 2])
    rotation = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    centers = (centers - pivot) @ rotation.T + pivot

    factor = np.array([width / CANVAS_WIDTH, height / CANVAS_HEIGHT])
    centers, sizes = centers * factor, sizes * factor
    for i in range(NUM_TEETH):
        box = clamp_box(Box(*centers[i], *sizes[i]), width, height)
        centers[i] = box.cx, box.cy
        sizes[i] = box.w, box.h
    return centers, sizes


def nominal_layout(width=CANVAS_WIDTH, height=CANVAS_HEIGHT):
    """Unperturbed (centers, sizes) of the mean anatomy, [32,2] each."""
    zeros = np.zeros(NUM_TEETH)
    return _layout(width, height, CANVAS_WIDTH / 2, UPPER_LEVEL * CANVAS_HEIGHT, ARCH_SEPARATION * CANVAS_HEIGHT,
                   SPAN_SCALE, CURVATURE, 0.0, zeros, zeros)


def sample_layout(config, rng):
    """Draw the geometry and the presence flags of one scene."""
    arch, size = config.arch_jitter, config.size_jitter
    x0 = CANVAS_WIDTH / 2 + 12.0 * arch * rng.uniform(-1, 1)
    upper_level = UPPER_LEVEL * CANVAS_HEIGHT + 10.0 * arch * rng.uniform(-1, 1)
    separation = (ARCH_SEPARATION + 0.015 * arch * rng.uniform(-1, 1)) * CANVAS_HEIGHT
    scale = SPAN_SCALE * (1.0 + 0.05 * size * rng.uniform(-1, 1))
    curvature = max(0.0, CURVATURE * (1.0 + 0.3 * arch * rng.uniform(-1, 1)))
    angle = float(np.clip(MAX_ROTATION_DEG * arch * rng.uniform(-1, 1), -MAX_ROTATION_DEG, MAX_ROTATION_DEG))
    width_noise = 0.04 * size * rng.uniform(-1, 1, NUM_TEETH)
    height_noise = 0.05 * size * rng.uniform(-1, 1, NUM_TEETH)
    centers, sizes = _layout(config.width, config.height, x0, upper_level, separation, scale, curvature, angle,
                             width_noise, height_noise)
    present = rng.random(NUM_TEETH) >= config.missing_probability
    return Layout(centers=centers, sizes=sizes, present=present)


def _blob_radius(box, ys, xs):
    """Superellipse radius of pixel centres; <= 1 inside the tooth."""
    dx = np.abs(xs - box.cx) / (box.w / 2)
    dy = np.abs(ys - box.cy) / (box.h / 2)
    return dx ** BLOB_EXPONENT + dy ** BLOB_EXPONENT


def tooth_mask(box, height, width):
    """Boolean (height, width) mask of the blob drawn for a box."""
    ys = np.arange(height, dtype=np.float64)[:, None] + 0.5
    xs = np.arange(width, dtype=np.float64)[None, :] + 0.5
    return _blob_radius(box, ys, xs) <= 1.0


def render_layout(layout, config, rng):
    """Render the grayscale image (uint8) of a layout."""
    width, height = config.width, config.height
    ys = np.arange(height, dtype=np.float64)[:, None] + 0.5
    xs = np.arange(width, dtype=np.float64)[None, :] + 0.5

    direction = rng.normal(size=2)
    direction /= max(np.linalg.norm(direction), 1e-12)
    strength = ILLUMINATION * config.contrast_jitter * rng.uniform(0.5, 1.0)
    image = BACKGROUND_LEVEL + strength * (direction[0] * (xs / width - 0.5) + direction[1] * (ys / height - 0.5))
    jaw_center = layout.centers[:, 1].mean()
    image = image + BONE_LEVEL * np.exp(-(((ys - jaw_center) / (0.3 * height)) ** 2))
    image = np.broadcast_to(image, (height, width)).copy()

    for position in range(NUM_TEETH):
        if not layout.present[position]:
            continue
        box = Box(*layout.centers[position], *layout.sizes[position])
        level = TOOTH_LEVEL + TOOTH_SPREAD * config.contrast_jitter * rng.uniform(-1, 1)
        top = max(int(np.floor(box.cy - box.h / 2)), 0)
        bottom = min(int(np.ceil(box.cy + box.h / 2)) + 1, height)
        left = max(int(np.floor(box.cx - box.w / 2)), 0)
        right = min(int(np.ceil(box.cx + box.w / 2)) + 1, width)
        radius = _blob_radius(box, ys[top:bottom], xs[:, left:right])
        inside = radius <= 1.0
        # enamel brighter towards the middle of the blob
        shade = level * (0.8 + 0.2 * (1.0 - np.minimum(radius, 1.0)))
        window = image[top:bottom, left:right]
        window[inside] = np.maximum(window[inside], shade[inside])

    image += rng.normal(0.0, config.noise_level, size=image.shape) if config.noise_level > 0 else 0.0
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def scene_rng(config, index):
    return np.random.default_rng([config.seed, index])


def synthesize_scene(config, index):
    """Deterministic scene for (config.seed, index)."""
    rng = scene_rng(config, index)
    layout = sample_layout(config, rng)
    image = render_layout(layout, config, rng)
    return scene_from_arrays(image, layout.centers, layout.sizes, layout.present)


def scene_stem(index):
    return f"scene_{index:05d}"


def synthesize_dataset(config, count, out_dir, workers=1, equalize=None):
    """
    Write count scenes plus a split manifest under out_dir.

    Args:
        equalize: Optional image -> image map applied before saving
            (the command surface passes CLAHE)

    Returns:
        The manifest as a DataFrame (stem, split)
    """
    layout = DatasetLayout(Path(out_dir))
    layout.create()

    def write_one(index):
        stem = scene_stem(index)
        scene = synthesize_scene(config, index)
        if equalize is not None:
            scene = Scene(equalize(scene.image), scene.teeth)
        save_scene(scene, layout.annotation_path(stem), layout.image_path(stem))
        return stem

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        stems = list(tqdm(executor.map(write_one, range(count)), total=count, desc="synthesize", leave=False))

    manifest = write_dataset_manifest(layout.root, stems, assign_splits(count, config.seed))
    logger.info("wrote %d scenes to %s", count, layout.root)
    return manifest
