import os

os.environ.setdefault("SDL_VIDEODRIVER", "dummy")

import numpy as np
import pygame

GRAY_PALETTE = [(level, level, level) for level in range(256)]


def gray_surface(image):
    """8-bit palettized surface showing a 2D uint8 array."""
    values = np.asarray(image, dtype=np.uint8)
    height, width = values.shape
    surface = pygame.Surface((width, height), 0, 8)
    surface.set_palette(GRAY_PALETTE)
    pygame.surfarray.blit_array(surface, np.ascontiguousarray(values.T))
    return surface


def rgb_surface(image):
    """24-bit surface from a 2D gray or 3D RGB uint8 array (rows first)."""
    values = np.asarray(image, dtype=np.uint8)
    if values.ndim == 2:
        values = np.repeat(values[:, :, None], 3, axis=2)
    height, width = values.shape[:2]
    surface = pygame.Surface((width, height), 0, 24)
    pygame.surfarray.blit_array(surface, np.ascontiguousarray(values.transpose(1, 0, 2)))
    return surface


def surface_to_gray(surface):
    """Luminance of a surface as a (height, width) uint8 array."""
    rgb = pygame.surfarray.array3d(surface).astype(np.float64)
    if np.array_equal(rgb[:, :, 0], rgb[:, :, 1]) and np.array_equal(rgb[:, :, 1], rgb[:, :, 2]):
        gray = rgb[:, :, 0]
    else:
        gray = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return np.clip(np.rint(gray), 0, 255).astype(np.uint8).T.copy()


def load_gray(path):
    return surface_to_gray(pygame.image.load(os.fspath(path)))


def save_gray(image, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    pygame.image.save(gray_surface(image), os.fspath(path))


def save_surface(surface, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    pygame.image.save(surface, os.fspath(path))
