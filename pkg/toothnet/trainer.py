"""
Trainer Module

Optimization of both stages against the combined objective. It provides:
- TrainConfig: optimizer, iterations, loss weights and ablation switches
- train_step: one forward/backward/update on a single scene
- validation_mse: stage-1 (MSE1) and refined (MSE2) center errors in px^2
- fit: the full loop over a dataset split with CSV logging

Targets per step:
- centers: the annotated box centers
- offsets: annotated centers minus the detached stage-1 estimate
- sizes: the annotated box widths and heights

Schedules:
- "joint": every step trains both stages
- "sequential": the first warmup_iterations steps train stage 1 only
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from toothnet.constants import METRICS_FILE, NUM_COORDS, VALIDATION_FILE
from toothnet.errors import ConfigError, DatasetError, DatasetIOError, NonFiniteLossError
from toothnet.losses import DR_NORMS, LossBreakdown, LossWeights, box_loss, center_loss, dr_loss, offset_loss
from toothnet.losses import total_loss
from toothnet.networks import crop_patches, image_tensor
from toothnet.ops import upsample_bilinear
from toothnet.optim import OptimizerConfig, build_optimizer
from toothnet.tensor import backward, no_grad

logger = logging.getLogger(__name__)

SCHEDULES = ("joint", "sequential")
METRIC_COLUMNS = ["step", "center", "dr", "offset", "box", "weight_reg", "total"]


@dataclass
class TrainConfig:
    """
    Attributes:
        optimizer: Update rule and learning rate
        weights: alpha / beta / gamma of the combined loss
        iterations: Number of optimizer steps
        seed: Seed for scene order
        use_dr: Include the distance regularization term
        use_offset: Train the offset head (otherwise refined = stage-1 centers)
        dr_norm: "squared" (default) or "plain"
        schedule: "joint" or "sequential"
        warmup_iterations: Stage-1-only steps under the sequential schedule
        log_every: Steps between progress log lines
    """

    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    iterations: int = 2000
    seed: int = 0
    use_dr: bool = True
    use_offset: bool = True
    dr_norm: str = "squared"
    schedule: str = "joint"
    warmup_iterations: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError(f"iterations must be non-negative, got {self.iterations}")
        if self.dr_norm not in DR_NORMS:
            raise ConfigError(f"unknown dr_norm '{self.dr_norm}' (expected one of {DR_NORMS})")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule '{self.schedule}' (expected one of {SCHEDULES})")
        if self.warmup_iterations < 0 or self.log_every < 1:
            raise ConfigError("warmup_iterations must be >= 0 and log_every >= 1")


def stage2_active(config, step):
    return config.schedule == "joint" or step >= config.warmup_iterations


def train_step(scene, pipeline, optimizer, config, step=0):
    """
    One optimization step on one scene.

    Returns:
        LossBreakdown of the step (before the update)

    Raises:
        NonFiniteLossError: when any loss component is NaN or infinite
    """
    # stage 2 sits out of the regularizer and the update during warmup
    with_stage2 = stage2_active(config, step)
    pipeline.set_stage2_trainable(with_stage2)
    image = image_tensor(scene.image, pipeline.config)
    target_centers = scene.centers().flatten()
    centers, features = pipeline.stage1_forward(image)

    parts = {"center": center_loss(centers, target_centers)}
    if config.use_dr:
        parts["dr"] = dr_loss(centers, config.dr_norm)
    if with_stage2:
        cfg = pipeline.config
        upsampled = upsample_bilinear(features, cfg.canvas_height, cfg.canvas_width)
        patches = crop_patches(image, upsampled, centers.values, cfg.patch_size)
        offsets, sizes = pipeline.stage2_forward(patches)
        if pipeline.use_offset:
            parts["offset"] = offset_loss(offsets.reshape(NUM_COORDS), target_centers - centers.values)
        parts["box"] = box_loss(sizes.reshape(NUM_COORDS), scene.sizes())

    total, breakdown = total_loss(parts, pipeline.trainable_parameters(), config.weights)
    if not breakdown.is_finite():
        logger.error("non-finite loss at step %d: %s", step, breakdown)
        raise NonFiniteLossError(breakdown, step)
    backward(total)
    optimizer.step()
    return breakdown


def predict_centers(pipeline, image):
    """(stage-1 centers, refined centers) as 64-float arrays, without graph."""
    with no_grad():
        centers, offsets, _ = pipeline.forward(image_tensor(image, pipeline.config))
    stage1 = centers.values.copy()
    refined = stage1 + offsets.values.reshape(NUM_COORDS) if pipeline.use_offset else stage1.copy()
    return stage1, refined


def validation_mse(pipeline, scenes):
    """Mean squared center error in px^2 over scenes: (MSE1, MSE2)."""
    if not scenes:
        raise DatasetError("validation needs at least one scene")
    first, second = [], []
    for scene in scenes:
        target = scene.centers().flatten()
        stage1, refined = predict_centers(pipeline, scene.image)
        first.append(np.mean((stage1 - target) ** 2))
        second.append(np.mean((refined - target) ** 2))
    return float(np.mean(first)), float(np.mean(second))


@dataclass
class FitResult:
    metrics: pd.DataFrame
    validation: pd.DataFrame
    last: LossBreakdown


def _write_csv(frame, path):
    try:
        frame.to_csv(path, index=False)
    except OSError as e:
        raise DatasetIOError(path, e) from e


def fit(pipeline, dataset, config, out_dir=None, train_split="train", val_split="val"):
    """
    Train on a dataset split, one scene per step.

    Every pass over the train split is an epoch; after each epoch (and after
    a trailing partial epoch) the validation MSE1 / MSE2 are recorded.
    Metrics go to <out_dir>/metrics.csv and validation.csv when out_dir is given.
    """
    stems = dataset.stems(train_split)
    if not stems:
        raise DatasetError(f"empty split '{train_split}'")
    val_scenes = dataset.scenes(val_split) if dataset.stems(val_split) else []
    pipeline.set_offset_enabled(config.use_offset)
    optimizer = build_optimizer(pipeline.trainable_parameters(), config.optimizer)
    rng = np.random.default_rng(config.seed)

    rows, val_rows = [], []
    last = LossBreakdown()
    order = []
    epoch = 0

    def record_validation():
        if not val_scenes:
            return
        mse1, mse2 = validation_mse(pipeline, val_scenes)
        val_rows.append({"epoch": epoch, "step": len(rows), "mse1": mse1, "mse2": mse2})
        logger.info("epoch %d: validation MSE1 %.2f px^2, MSE2 %.2f px^2", epoch, mse1, mse2)

    try:
        for step in tqdm(range(config.iterations), desc="train", leave=False):
            if not order:
                order = list(rng.permutation(len(stems)))
            stem = stems[order.pop(0)]
            last = train_step(dataset.load(stem), pipeline, optimizer, config, step)
            rows.append(last.as_row(step))
            if step % config.log_every == 0:
                logger.info("step %d: total %.4f (center %.3f, dr %.3f, offset %.3f, box %.3f)",
                            step, last.total, last.center, last.dr, last.offset, last.box)
            if not order:
                epoch += 1
                record_validation()
        if order:
            epoch += 1
            record_validation()
    finally:
        pipeline.set_stage2_trainable(True)
        metrics = pd.DataFrame(rows, columns=METRIC_COLUMNS)
        validation = pd.DataFrame(val_rows, columns=["epoch", "step", "mse1", "mse2"])
        if out_dir is not None:
            _write_csv(metrics, Path(out_dir) / METRICS_FILE)
            _write_csv(validation, Path(out_dir) / VALIDATION_FILE)

    return FitResult(metrics=metrics, validation=validation, last=last)
