import numpy as np

from toothnet.geometry import Box, ToothId
from toothnet.scene import ToothAnnotation


def numeric_grad(fn, x, h=1e-6):
    """Central finite differences of the scalar fn() with respect to x.values."""
    grad = np.zeros_like(x.values)
    flat = x.values.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        upper = fn().item()
        flat[i] = original - h
        lower = fn().item()
        flat[i] = original
        grad.reshape(-1)[i] = (upper - lower) / (2 * h)
    return grad


def grid_teeth(present=True):
    """32 annotations on a 64x32 grid: upper row y=10, lower row y=22, boxes 2x4, x = 8 + 3 * slot."""
    teeth = []
    for position in range(32):
        tooth = ToothId.from_position(position)
        cy = 10.0 if position < 16 else 22.0
        teeth.append(ToothAnnotation(tooth, present, Box(8.0 + 3.0 * tooth.slot, cy, 2.0, 4.0)))
    return teeth
