"""
Render Module

Static pictures of results, drawn with pygame surfaces:
- Overlays: the radiograph with all 32 predicted boxes, each labelled with
  its tooth number and, when ground truth is known, its IoU in percent
- Confusion matrix: 32x32 grid colour-mapped by row-normalized counts
"""

import logging

import numpy as np
import pygame

from toothnet.constants import NUM_TEETH
from toothnet.geometry import iou
from Utility.font_manager import font_manager
from Utility.image_io import rgb_surface, save_surface

logger = logging.getLogger(__name__)

# Colors
PRESENT_COLOR = (60, 220, 90)
MISSING_COLOR = (240, 170, 40)
UNKNOWN_COLOR = (80, 170, 255)
LABEL_COLOR = (255, 255, 255)
GRID_COLOR = (40, 40, 40)
BACKGROUND_COLOR = (255, 255, 255)
TEXT_COLOR = (0, 0, 0)

LABEL_SIZE = 14
CELL_SIZE = 16
MARGIN = 28


def box_label(detection, scene=None):
    """'<id>' or '<id> <iou>%' when the ground-truth scene is known."""
    if scene is None:
        return str(detection.tooth.index)
    overlap = iou(detection.box, scene.annotation(detection.tooth).box)
    return f"{detection.tooth.index} {round(overlap * 100)}%"


def draw_overlay(image, result, scene=None):
    """Surface with the image and the labelled boxes of a DetectionResult."""
    surface = rgb_surface(image)
    font = font_manager.get_font(LABEL_SIZE)
    for detection in result:
        if scene is None:
            color = UNKNOWN_COLOR
        else:
            color = PRESENT_COLOR if scene.annotation(detection.tooth).present else MISSING_COLOR
        x0, y0, x1, y1 = detection.box.corners()
        rect = pygame.Rect(int(round(x0)), int(round(y0)), max(1, int(round(x1 - x0))), max(1, int(round(y1 - y0))))
        pygame.draw.rect(surface, color, rect, 1)
        text = font.render(box_label(detection, scene), True, LABEL_COLOR)
        surface.blit(text, (rect.x, max(0, rect.y - text.get_height())))
    return surface


def save_overlay(image, result, path, scene=None):
    save_surface(draw_overlay(image, result, scene), path)


def colormap(value):
    """White (0) to dark blue (1)."""
    value = float(np.clip(value, 0.0, 1.0))
    return (int(round(255 * (1 - value))), int(round(255 * (1 - 0.7 * value))), int(round(255 - 115 * value)))


def draw_confusion(normalized, counts=None):
    size = MARGIN + NUM_TEETH * CELL_SIZE
    surface = pygame.Surface((size, size))
    surface.fill(BACKGROUND_COLOR)
    font = font_manager.get_font(CELL_SIZE - 4)
    for row in range(NUM_TEETH):
        for col in range(NUM_TEETH):
            rect = pygame.Rect(MARGIN + col * CELL_SIZE, MARGIN + row * CELL_SIZE, CELL_SIZE, CELL_SIZE)
            pygame.draw.rect(surface, colormap(normalized[row, col]), rect)
            pygame.draw.rect(surface, GRID_COLOR, rect, 1)
    for tooth in range(1, NUM_TEETH + 1, 4):
        label = font.render(str(tooth), True, TEXT_COLOR)
        offset = MARGIN + (tooth - 1) * CELL_SIZE
        surface.blit(label, (offset, 2))
        surface.blit(label, (2, offset))
    if counts is not None:
        logger.debug("confusion matrix holds %d matched teeth", int(np.sum(counts)))
    return surface


def save_confusion(normalized, path, counts=None):
    save_surface(draw_confusion(normalized, counts), path)
