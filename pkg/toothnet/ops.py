"""
Network Ops Module

This module holds the differentiable layers the two detection stages are
built from. It provides:
- conv2d: strided, zero-padded 2D convolution
- relu: rectified linear unit (subgradient 0 at 0)
- global_avg_pool: per-channel spatial mean
- fully_connected: affine map
- upsample_bilinear: align-corners-false bilinear interpolation
- concat_channels: channel stacking
- crop_windows: fixed-size zero-padded windows

conv2d, global_avg_pool and fully_connected accept an optional leading
batch axis, so the 32 stage-2 patches run through one call.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from toothnet.errors import ShapeError
from toothnet.tensor import Tensor, as_tensor


def _with_batch(values, expected_ndim, name):
    if values.ndim == expected_ndim:
        return values[None], False
    if values.ndim == expected_ndim + 1:
        return values, True
    raise ShapeError(f"{name}: expected {expected_ndim}D input (or batched), got shape {values.shape}")


def conv2d(input, weights, bias, stride=1, padding=0):
    """
    2D convolution.

    Args:
        input: Tensor [C,H,W] or [N,C,H,W]
        weights: Tensor [K,C,kh,kw]
        bias: Tensor [K]
        stride: Step between windows (>= 1)
        padding: Zero padding on every spatial side (>= 0)

    Returns:
        Tensor [K,H',W'] (or [N,K,H',W']) with H' = (H + 2p - kh) // stride + 1
    """
    input, weights, bias = as_tensor(input), as_tensor(weights), as_tensor(bias)
    x, batched = _with_batch(input.values, 3, "conv2d")
    w, b = weights.values, bias.values
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} / padding={padding}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d: weights must be [K,C,kh,kw], got {w.shape}")
    n, c, h, width = x.shape
    k, wc, kh, kw = w.shape
    if wc != c:
        raise ShapeError(f"conv2d: input has {c} channels, weights expect {wc}")
    if b.shape != (k,):
        raise ShapeError(f"conv2d: bias must be [{k}], got {b.shape}")
    hp, wp = h + 2 * padding, width + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d: zero-sized output")

    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + b[None, :, None, None]

    def backward_fn(g):
        if not batched:
            g = g[None]
        grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_b = g.sum(axis=(0, 2, 3))
        cols = np.tensordot(g, w, axes=([1], [0]))  # N,Ho,Wo,C,kh,kw
        grad_xp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                grad_xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += (
                    cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        grad_x = grad_xp[:, :, padding:padding + h, padding:padding + width]
        if not batched:
            grad_x = grad_x[0]
        return grad_x, grad_w, grad_b

    if not batched:
        out = out[0]
    return Tensor._from_op(out, (input, weights, bias), backward_fn, "conv2d")


def relu(input):
    input = as_tensor(input)
    x = input.values
    mask = x > 0.0
    return Tensor._from_op(np.where(mask, x, 0.0), (input,), lambda g: (g * mask,), "relu")


def global_avg_pool(input):
    """[C,H,W] -> [C], or [N,C,H,W] -> [N,C]."""
    input = as_tensor(input)
    x = input.values
    if x.ndim not in (3, 4):
        raise ShapeError(f"global_avg_pool: expected [C,H,W] or [N,C,H,W], got {x.shape}")
    h, w = x.shape[-2:]
    shape = x.shape

    def backward_fn(g):
        return (np.broadcast_to(g[..., None, None] / (h * w), shape).copy(),)

    return Tensor._from_op(x.mean(axis=(-2, -1)), (input,), backward_fn, "gap")


def fully_connected(input, weights, bias):
    """[N] -> [M] (or [B,N] -> [B,M]) affine map y = W x + b."""
    input, weights, bias = as_tensor(input), as_tensor(weights), as_tensor(bias)
    x, batched = _with_batch(input.values, 1, "fully_connected")
    w, b = weights.values, bias.values
    if w.ndim != 2 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"fully_connected: weights {w.shape} do not accept input of size {x.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"fully_connected: bias must be [{w.shape[0]}], got {b.shape}")

    def backward_fn(g):
        g2 = g if batched else g[None]
        grad_x = g2 @ w
        return (grad_x if batched else grad_x[0]), g2.T @ x, g2.sum(axis=0)

    out = x @ w.T + b
    return Tensor._from_op(out if batched else out[0], (input, weights, bias), backward_fn, "fc")


def interpolation_matrix(source, target):
    """
    Bilinear resampling weights (align_corners=False) as a [target, source]
    matrix: row r holds the weights of output sample r.
    """
    scale = source / target
    coords = (np.arange(target) + 0.5) * scale - 0.5
    coords = np.clip(coords, 0.0, source - 1)
    lower = np.floor(coords).astype(int)
    upper = np.minimum(lower + 1, source - 1)
    frac = coords - lower
    matrix = np.zeros((target, source), dtype=np.float64)
    rows = np.arange(target)
    np.add.at(matrix, (rows, lower), 1.0 - frac)
    np.add.at(matrix, (rows, upper), frac)
    return matrix


def upsample_bilinear(input, target_h, target_w):
    """[C,H,W] -> [C,target_h,target_w]; downscaling is rejected."""
    input = as_tensor(input)
    x = input.values
    if x.ndim != 3:
        raise ShapeError(f"upsample_bilinear: expected [C,H,W], got {x.shape}")
    _, h, w = x.shape
    if target_h < h or target_w < w:
        raise ShapeError(f"upsample_bilinear: cannot downscale {h}x{w} to {target_h}x{target_w}")
    rows = interpolation_matrix(h, target_h)
    cols = interpolation_matrix(w, target_w)

    def backward_fn(g):
        return (rows.T @ g @ cols,)

    out = rows @ x @ cols.T
    return Tensor._from_op(out, (input,), backward_fn, "upsample")


def concat_channels(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_channels: spatial mismatch {a.shape} vs {b.shape}")
    split = a.shape[0]

    def backward_fn(g):
        return g[:split], g[split:]

    return Tensor._from_op(np.concatenate([a.values, b.values], axis=0), (a, b), backward_fn, "concat")


def crop_windows(input, tops, lefts, size):
    """
    Cut size x size windows out of a [C,H,W] tensor.

    Windows reaching past the input are zero-filled. The window positions
    are plain integers, so no gradient reaches them.

    Returns:
        Tensor [N,C,size,size], one window per (top, left) pair
    """
    input = as_tensor(input)
    x = input.values
    if x.ndim != 3:
        raise ShapeError(f"crop_windows: expected [C,H,W], got {x.shape}")
    c, h, w = x.shape
    spans = []
    out = np.zeros((len(tops), c, size, size), dtype=np.float64)
    for n, (top, left) in enumerate(zip(tops, lefts)):
        top, left = int(top), int(left)
        y0, y1 = max(top, 0), min(top + size, h)
        x0, x1 = max(left, 0), min(left + size, w)
        if y1 > y0 and x1 > x0:
            out[n, :, y0 - top:y1 - top, x0 - left:x1 - left] = x[:, y0:y1, x0:x1]
        spans.append((top, left, y0, y1, x0, x1))

    def backward_fn(g):
        grad = np.zeros_like(x)
        for n, (top, left, y0, y1, x0, x1) in enumerate(spans):
            if y1 > y0 and x1 > x0:
                grad[:, y0:y1, x0:x1] += g[n, :, y0 - top:y1 - top, x0 - left:x1 - left]
        return (grad,)

    return Tensor._from_op(out, (input,), backward_fn, "crop")
