"""
Gradient Check Module

Compares every analytic gradient with central finite differences.

For one case and one seed, per leaf tensor:
    numeric_i = (f(x + h e_i) - f(x - h e_i)) / (2h),  h = 1e-5
    scale = max(max|analytic|, max|numeric|, floor)
    error = max|analytic - numeric| / scale
where floor = max(1e-8, 1e-14 |f| / (h * 1e-4)) is the resolution of the
difference quotient. The case error is the worst leaf error.

A case passes when its worst error over all seeds is at most 1e-4.
Coordinates whose one-sided differences disagree by more than the
tolerance times the leaf scale sit on a ReLU kink and are skipped
(counted in the table).
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from toothnet import ops
from toothnet.constants import GRADCHECK_NOISE, GRADCHECK_SEEDS, GRADCHECK_STEP, GRADCHECK_TOLERANCE, NUM_COORDS
from toothnet.errors import ConfigError
from toothnet.losses import LossWeights, box_loss, center_loss, dr_loss, offset_loss, total_loss
from toothnet.networks import PipelineConfig, Stage1Net, Stage2Net
from toothnet.tensor import Parameter, Tensor, backward

logger = logging.getLogger(__name__)

COORDS_PER_TENSOR = 12
TABLE_COLUMNS = ["case", "seeds", "max_rel_error", "skipped", "passed"]


@dataclass
class Case:
    """
    A differentiable computation to check.

    build(rng) returns (loss_fn, leaves): loss_fn() rebuilds the scalar loss
    from the current leaf values; leaves are the tensors to differentiate.
    """

    name: str
    build: object


def _away_from_zero(rng, shape, margin=0.1):
    values = rng.normal(size=shape)
    return np.where(np.abs(values) < margin, np.sign(values + 1e-12) * margin + values, values)


def _case_add_mul(rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4,)), requires_grad=True)
    w = rng.normal(size=(3, 4))
    return (lambda: ((a * b + a - b) * w).sum()), [a, b]


def _case_div_pow(rng):
    a = Tensor(rng.uniform(0.5, 2.0, size=(5,)), requires_grad=True)
    b = Tensor(rng.uniform(0.5, 2.0, size=(5,)), requires_grad=True)
    return (lambda: (a / b + a ** 3 - 1.0 / a).sum()), [a, b]


def _case_sqrt_square(rng):
    a = Tensor(rng.uniform(0.2, 3.0, size=(6,)), requires_grad=True)
    w = rng.normal(size=(6,))
    return (lambda: (a.sqrt() * w + a.square()).sum()), [a]


def _case_reduce_reshape(rng):
    a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    w = rng.normal(size=(3, 2))
    return (lambda: (a.mean(axis=2).reshape(3, 2) * w).sum() + a[1, :, 2:].sum()), [a]


def _case_conv2d(rng):
    x = Tensor(rng.normal(size=(2, 7, 6)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(3,)), requires_grad=True)
    weights = rng.normal(size=(3, 4, 3))
    return (lambda: (ops.conv2d(x, w, b, stride=2, padding=1) * weights).sum()), [x, w, b]


def _case_conv2d_batched(rng):
    x = Tensor(rng.normal(size=(3, 2, 8, 8)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 2, 4, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4,)), requires_grad=True)
    weights = rng.normal(size=(3, 4, 2, 2))
    return (lambda: (ops.conv2d(x, w, b, stride=4) * weights).sum()), [x, w, b]


def _case_relu(rng):
    x = Tensor(_away_from_zero(rng, (4, 5)), requires_grad=True)
    weights = rng.normal(size=(4, 5))
    return (lambda: (ops.relu(x) * weights).sum()), [x]


def _case_gap_fc(rng):
    x = Tensor(rng.normal(size=(3, 4, 5)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(2,)), requires_grad=True)
    weights = rng.normal(size=(2,))
    return (lambda: (ops.fully_connected(ops.global_avg_pool(x), w, b) * weights).sum()), [x, w, b]


def _case_upsample(rng):
    x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    weights = rng.normal(size=(2, 9, 10))
    return (lambda: (ops.upsample_bilinear(x, 9, 10) * weights).sum()), [x]


def _case_concat_crop(rng):
    a = Tensor(rng.normal(size=(1, 6, 7)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 6, 7)), requires_grad=True)
    tops, lefts = [-2, 1, 3], [4, 0, -1]
    weights = rng.normal(size=(3, 3, 4, 4))
    return (lambda: (ops.crop_windows(ops.concat_channels(a, b), tops, lefts, 4) * weights).sum()), [a, b]


def _random_arches(rng):
    xs = np.concatenate([np.cumsum(rng.uniform(20, 40, size=16)), np.cumsum(rng.uniform(20, 40, size=16))])
    ys = np.concatenate([200 + rng.normal(0, 8, size=16), 320 + rng.normal(0, 8, size=16)])
    return np.stack([xs, ys], axis=1).reshape(NUM_COORDS)


def _case_center_loss(rng):
    p = Tensor(rng.normal(0, 50, size=NUM_COORDS), requires_grad=True)
    target = rng.normal(0, 50, size=NUM_COORDS)
    return (lambda: center_loss(p, target)), [p]


def _case_offset_loss(rng):
    p = Tensor(rng.normal(0, 5, size=NUM_COORDS), requires_grad=True)
    target = rng.normal(0, 5, size=NUM_COORDS)
    return (lambda: offset_loss(p, target)), [p]


def _case_box_loss(rng):
    p = Tensor(rng.uniform(10, 60, size=NUM_COORDS), requires_grad=True)
    target = rng.uniform(10, 60, size=NUM_COORDS)
    return (lambda: box_loss(p, target)), [p]


def _case_dr_loss(rng):
    p = Tensor(_random_arches(rng), requires_grad=True)
    return (lambda: dr_loss(p)), [p]


def _case_dr_loss_plain(rng):
    p = Tensor(_random_arches(rng), requires_grad=True)
    return (lambda: dr_loss(p, norm="plain")), [p]


def _case_total_loss(rng):
    p = Tensor(_random_arches(rng), requires_grad=True)
    target = _random_arches(rng)
    off = Tensor(rng.normal(0, 3, size=NUM_COORDS), requires_grad=True)
    size = Tensor(rng.uniform(10, 60, size=NUM_COORDS), requires_grad=True)
    size_target = rng.uniform(10, 60, size=NUM_COORDS)
    w = Parameter(rng.normal(size=(4, 3)), "w")

    def loss_fn():
        parts = {
            "center": center_loss(p, target),
            "dr": dr_loss(p),
            "offset": offset_loss(off, target - p.values),
            "box": box_loss(size, size_target),
        }
        return total_loss(parts, [w], LossWeights())[0]

    return loss_fn, [p, off, size, w]


def _small_config():
    return PipelineConfig(backbone="tiny", canvas_width=32, canvas_height=16, patch_size=8)


def _case_stage1_center(rng):
    config = _small_config()
    net = Stage1Net(config, rng)
    image = Tensor(rng.uniform(0, 1, size=(1, config.canvas_height, config.canvas_width)))
    target = rng.uniform(0, 32, size=NUM_COORDS)
    return (lambda: center_loss(net(image)[0], target)), net.parameters()


def _case_stage2_offset(rng):
    config = _small_config()
    net = Stage2Net(config, rng)
    patches = Tensor(rng.uniform(0, 1, size=(32, config.feature_channels + 1, 8, 8)))
    target = rng.normal(0, 2, size=NUM_COORDS)
    return (lambda: offset_loss(net(patches)[0].reshape(NUM_COORDS), target)), net.parameters()


def _case_stage2_box(rng):
    config = _small_config()
    net = Stage2Net(config, rng)
    patches = Tensor(rng.uniform(0, 1, size=(32, config.feature_channels + 1, 8, 8)))
    target = rng.uniform(2, 10, size=NUM_COORDS)
    return (lambda: box_loss(net(patches)[1].reshape(NUM_COORDS), target)), net.parameters()


CASES = [
    Case("add_mul", _case_add_mul),
    Case("div_pow", _case_div_pow),
    Case("sqrt_square", _case_sqrt_square),
    Case("reduce_reshape_index", _case_reduce_reshape),
    Case("conv2d", _case_conv2d),
    Case("conv2d_batched", _case_conv2d_batched),
    Case("relu", _case_relu),
    Case("gap_fc", _case_gap_fc),
    Case("upsample_bilinear", _case_upsample),
    Case("concat_crop", _case_concat_crop),
    Case("center_loss", _case_center_loss),
    Case("offset_loss", _case_offset_loss),
    Case("box_loss", _case_box_loss),
    Case("dr_loss", _case_dr_loss),
    Case("dr_loss_plain", _case_dr_loss_plain),
    Case("total_loss", _case_total_loss),
    Case("stage1_center", _case_stage1_center),
    Case("stage2_offset", _case_stage2_offset),
    Case("stage2_box", _case_stage2_box),
]


def _coordinates(leaf, rng):
    size = leaf.values.size
    if size <= COORDS_PER_TENSOR:
        return np.arange(size)
    return np.sort(rng.choice(size, COORDS_PER_TENSOR, replace=False))


def _leaf_error(samples, floor):
    """(relative error, skipped) over the sampled coordinates of one leaf."""
    scale = max(floor, max(max(abs(a), abs(n)) for a, n, _ in samples))
    kept = [(a, n) for a, n, kink in samples if kink <= GRADCHECK_TOLERANCE * scale]
    skipped = len(samples) - len(kept)
    if not kept:
        return 0.0, skipped
    return max(abs(a - n) for a, n in kept) / scale, skipped


def check_case(case, seed, step=GRADCHECK_STEP, corrupt=False):
    """
    Relative error of one case for one seed.

    Errors are scaled leaf by leaf; the per-leaf scale never drops below
    the finite-difference noise level of the loss.

    Returns:
        (worst relative error over the leaves, number of skipped kink coordinates)
    """
    rng = np.random.default_rng(seed)
    loss_fn, leaves = case.build(rng)
    for leaf in leaves:
        leaf.grad = None
    loss = loss_fn()
    backward(loss)
    floor = max(1e-8, GRADCHECK_NOISE * abs(loss.item()) / step / GRADCHECK_TOLERANCE)

    worst, skipped = 0.0, 0
    for leaf in leaves:
        grad = np.zeros_like(leaf.values) if leaf.grad is None else leaf.grad
        if corrupt:
            grad = grad * 1.5 + 1e-3
        flat = leaf.values.reshape(-1)
        samples = []
        for i in _coordinates(leaf, rng):
            original = flat[i]
            flat[i] = original + step
            upper = loss_fn().item()
            flat[i] = original - step
            lower = loss_fn().item()
            flat[i] = original
            middle = loss_fn().item()
            central = (upper - lower) / (2 * step)
            forward_diff, backward_diff = (upper - middle) / step, (middle - lower) / step
            samples.append((grad.reshape(-1)[i], central, abs(forward_diff - backward_diff)))
        if not samples:
            continue
        error, kinks = _leaf_error(samples, floor)
        worst = max(worst, float(error))
        skipped += kinks
    return worst, skipped


def run_gradcheck(seed=0, num_seeds=GRADCHECK_SEEDS, cases=None, corrupt=()):
    """
    Check every case over num_seeds seeds.

    Args:
        seed: Base seed; case seeds are (seed, case index, i)
        num_seeds: Seeds per case
        cases: Case names to run (default: all)
        corrupt: Case names whose analytic gradient is deliberately distorted

    Returns:
        DataFrame with columns case, seeds, max_rel_error, skipped, passed
    """
    names = {c.name for c in CASES}
    unknown = sorted(set(cases or ()) - names) + sorted(set(corrupt) - names)
    if unknown:
        raise ConfigError(f"unknown gradient check case(s) {unknown}")
    selected = [c for c in CASES if cases is None or c.name in cases]
    rows = []
    for case_index, case in enumerate(CASES):
        if case not in selected:
            continue
        worst, skipped = 0.0, 0
        for i in range(num_seeds):
            error, kinks = check_case(case, [seed, case_index, i], corrupt=case.name in corrupt)
            worst = max(worst, error)
            skipped += kinks
        passed = worst <= GRADCHECK_TOLERANCE
        if not passed:
            logger.error("gradient check failed for %s: max relative error %.3e", case.name, worst)
        rows.append({"case": case.name, "seeds": num_seeds, "max_rel_error": worst, "skipped": skipped,
                     "passed": passed})
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)
