"""
Losses Module

Every term of the training objective, each built from Tensor ops so that
backward() differentiates it. It provides:
- center_loss: MSE between predicted and annotated centers
- dr_loss: distance regularization on neighbor-distance Laplacians
- offset_loss: MSE of the stage-2 center offsets
- box_loss: MSE of the stage-2 box sizes
- total_loss: the weighted sum plus weight regularization

Combined objective:
    L = L_cen + L_dr + alpha * L_off + beta * L_box + gamma * sum(w^2)

All task losses operate on decoded pixel coordinates.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from toothnet.constants import DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_GAMMA, NUM_COORDS, TEETH_PER_ARCH
from toothnet.errors import ConfigError, ShapeError
from toothnet.tensor import Tensor, as_tensor

logger = logging.getLogger(__name__)

DR_NORMS = ("squared", "plain")


@dataclass
class LossWeights:
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError(f"loss weights must be non-negative, got {self}")


@dataclass
class LossBreakdown:
    center: float = 0.0
    dr: float = 0.0
    offset: float = 0.0
    box: float = 0.0
    weight_reg: float = 0.0
    total: float = 0.0

    def as_row(self, step):
        return {"step": step, **asdict(self)}

    def is_finite(self):
        return all(np.isfinite(v) for v in asdict(self).values())


def _mse(predicted, target, name):
    predicted = as_tensor(predicted)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if predicted.size != NUM_COORDS or target.size != NUM_COORDS:
        raise ShapeError(f"{name}: expected {NUM_COORDS} values, got {predicted.size} and {target.size}")
    residual = predicted.reshape(NUM_COORDS) - target
    return residual.square().mean()


def center_loss(predicted, target):
    return _mse(predicted, target, "center_loss")


def offset_loss(predicted_offset, target_offset):
    return _mse(predicted_offset, target_offset, "offset_loss")


def box_loss(predicted_sizes, target_sizes):
    return _mse(predicted_sizes, target_sizes, "box_loss")


def arch_distances(predicted):
    """[2, 15] neighbor distances (upper row, lower row) of a 64-value point tensor."""
    points = as_tensor(predicted).reshape(2, TEETH_PER_ARCH, 2)
    steps = points[:, 1:, :] - points[:, :-1, :]
    return steps.square().sum(axis=2).sqrt()


def dr_loss(predicted, norm="squared"):
    """
    Distance regularization.

    For each arch the 15 neighbor distances d are turned into 13 interior
    second differences d[i+1] - 2 d[i] + d[i-1]; the loss sums their squared
    norms over both arches ("plain" uses the unsquared norm per arch).
    """
    if norm not in DR_NORMS:
        raise ConfigError(f"unknown DR norm '{norm}' (expected one of {DR_NORMS})")
    predicted = as_tensor(predicted)
    if predicted.size != NUM_COORDS:
        raise ShapeError(f"dr_loss: expected {NUM_COORDS} values, got {predicted.size}")
    distances = arch_distances(predicted)
    if np.any(distances.values == 0.0):
        logger.warning("coincident neighbor points: DR gradient set to 0 for %d distance(s)",
                       int(np.sum(distances.values == 0.0)))
    laplacian = distances[:, 2:] - distances[:, 1:-1] * 2.0 + distances[:, :-2]
    if norm == "squared":
        return laplacian.square().sum()
    return laplacian.square().sum(axis=1).sqrt().sum()


def weight_regularization(params):
    """Sum of squared values over all trainable parameters."""
    reg = None
    for param in params:
        if not param.trainable:
            continue
        term = param.square().sum()
        reg = term if reg is None else reg + term
    return reg if reg is not None else Tensor(0.0)


def total_loss(parts, params, weights):
    """
    Combine the task terms with the weight regularization.

    Args:
        parts: dict with any of "center", "dr", "offset", "box" (scalar
            Tensors or floats); missing terms count as 0
        params: Parameters entering the regularization term
        weights: LossWeights

    Returns:
        (scalar Tensor, LossBreakdown)
    """
    center = as_tensor(parts.get("center", 0.0))
    dr = as_tensor(parts.get("dr", 0.0))
    offset = as_tensor(parts.get("offset", 0.0))
    box = as_tensor(parts.get("box", 0.0))
    reg = weight_regularization(params)
    total = center + dr + offset * weights.alpha + box * weights.beta + reg * weights.gamma
    breakdown = LossBreakdown(
        center=center.item(),
        dr=dr.item(),
        offset=offset.item(),
        box=box.item(),
        weight_reg=reg.item(),
        total=total.item(),
    )
    return total, breakdown
