"""Low-level numeric kernels on (batch, channel, height, width) arrays.

Every operation comes in at most two forms: a naive reference (explicit
window sweeps, used as the oracle in tests) and an optimized path
(patch-lowering plus one matrix multiply). Convolution is cross-correlation:
no kernel flip. Reductions keep a fixed summation order so repeated
single-threaded runs are bit-identical.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import ConvSpec, conv_out_extent, require_axes


def _check_conv_args(x: np.ndarray, weights: np.ndarray, bias, spec: ConvSpec) -> None:
    require_axes(x, 4, "conv input")
    require_axes(weights, 4, "conv weights")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"input channel axis: got {x.shape[1]}, spec requires {spec.in_channels}"
        )
    if weights.shape != spec.weight_shape():
        raise ShapeError(
            f"weight dims {weights.shape} do not match spec {spec.weight_shape()}"
        )
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(
            f"bias length {bias.shape} does not match out_channels {spec.out_channels}"
        )


def conv2d_naive(x: np.ndarray, weights: np.ndarray, bias, spec: ConvSpec) -> np.ndarray:
    """Reference convolution: per-output-element window sums."""
    _check_conv_args(x, weights, bias, spec)
    b, _, h, w = x.shape
    oh, ow = spec.out_hw(h, w)
    p, s = spec.padding, spec.stride
    cin_g = spec.in_channels // spec.groups
    cout_g = spec.out_channels // spec.groups
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((b, spec.out_channels, oh, ow), dtype=x.dtype)
    for n in range(b):
        for co in range(spec.out_channels):
            g = co // cout_g
            patch_src = xp[n, g * cin_g : (g + 1) * cin_g]
            for i in range(oh):
                for j in range(ow):
                    window = patch_src[:, i * s : i * s + spec.kernel_h, j * s : j * s + spec.kernel_w]
                    out[n, co, i, j] = np.sum(window * weights[co])
    if bias is not None:
        out += bias.reshape(1, -1, 1, 1)
    return out


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Lower sliding windows to columns: (B, C, H, W) -> (B, C*kh*kw, OH*OW)."""
    b, c, h, w = x.shape
    oh = conv_out_extent(h, kh, stride, padding)
    ow = conv_out_extent(w, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(b, c * kh * kw, oh * ow)


def col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Scatter-add inverse of im2col; sums contributions of overlapping windows."""
    b, c, h, w = x_shape
    oh = conv_out_extent(h, kh, stride, padding)
    ow = conv_out_extent(w, kw, stride, padding)
    xp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    cols6 = cols.reshape(b, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols6[:, :, i, j]
    if padding == 0:
        return xp
    return xp[:, :, padding : padding + h, padding : padding + w]


def conv2d_fast(x: np.ndarray, weights: np.ndarray, bias, spec: ConvSpec) -> np.ndarray:
    """Convolution lowered to patch matrices and a matrix multiply per group."""
    _check_conv_args(x, weights, bias, spec)
    b, _, h, w = x.shape
    oh, ow = spec.out_hw(h, w)
    cin_g = spec.in_channels // spec.groups
    cout_g = spec.out_channels // spec.groups
    out = np.empty((b, spec.out_channels, oh, ow), dtype=x.dtype)
    for g in range(spec.groups):
        cols = im2col(
            x[:, g * cin_g : (g + 1) * cin_g], spec.kernel_h, spec.kernel_w, spec.stride, spec.padding
        )
        wmat = weights[g * cout_g : (g + 1) * cout_g].reshape(cout_g, -1)
        out[:, g * cout_g : (g + 1) * cout_g] = (wmat @ cols).reshape(b, cout_g, oh, ow)
    if bias is not None:
        out += bias.reshape(1, -1, 1, 1)
    return out


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """2-D matrix product; inner dimensions must agree."""
    require_axes(a, 2, "matmul lhs")
    require_axes(b, 2, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dims differ: lhs {a.shape} vs rhs {b.shape}")
    return a @ b


def _pool_windows(x: np.ndarray, kernel: int, stride: int, padding: int, pad_value: float):
    require_axes(x, 4, "pool input")
    b, c, h, w = x.shape
    if kernel > h + 2 * padding or kernel > w + 2 * padding:
        raise ShapeError(
            f"pool window {kernel} larger than padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    oh = conv_out_extent(h, kernel, stride, padding)
    ow = conv_out_extent(w, kernel, stride, padding)
    xp = np.pad(
        x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
        constant_values=pad_value,
    )
    win = np.empty((b, c, kernel * kernel, oh, ow), dtype=x.dtype)
    for i in range(kernel):
        for j in range(kernel):
            win[:, :, i * kernel + j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return win, oh, ow


def max_pool2d(x: np.ndarray, kernel: int, stride: int, padding: int = 0):
    """Max pooling; returns (output, argmax) with argmax as in-window offsets.

    Padding uses -inf so a padded position never wins the max.
    """
    win, _, _ = _pool_windows(x, kernel, stride, padding, -np.inf)
    idx = win.argmax(axis=2)
    out = np.take_along_axis(win, idx[:, :, None], axis=2)[:, :, 0]
    return out, idx


def avg_pool2d(x: np.ndarray, kernel: int, stride: int, padding: int = 0) -> np.ndarray:
    """Average pooling over fixed-size windows; zero padding counts in the divisor."""
    win, _, _ = _pool_windows(x, kernel, stride, padding, 0.0)
    return win.sum(axis=2) / (kernel * kernel)


def pool2d(x: np.ndarray, kind: str, kernel: int, stride: int, padding: int = 0) -> np.ndarray:
    if kind == "max":
        return max_pool2d(x, kernel, stride, padding)[0]
    if kind == "avg":
        return avg_pool2d(x, kernel, stride, padding)
    raise ValueError(f"unknown pool kind {kind!r}")


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Per-(batch, channel) spatial mean, keeping 1x1 spatial axes."""
    require_axes(x, 4, "global pool input")
    return x.mean(axis=(2, 3), keepdims=True)


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize with half-pixel-center sampling and edge clamping.

    Source coordinate for output index d along an axis of input extent n:
    src = (d + 0.5) * n / out - 0.5, clamped to [0, n - 1].
    """
    require_axes(x, 4, "resize input")
    if out_h < 1 or out_w < 1:
        raise ShapeError("output extents must be >= 1")
    _, _, h, w = x.shape
    ys = np.clip((np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = (ys - y0).astype(x.dtype)
    tx = (xs - x0).astype(x.dtype)
    ty_col = ty[:, None]
    tx_row = tx[None, :]
    top = x[:, :, y0[:, None], x0[None, :]] * (1 - tx_row) + x[:, :, y0[:, None], x1[None, :]] * tx_row
    bot = x[:, :, y1[:, None], x0[None, :]] * (1 - tx_row) + x[:, :, y1[:, None], x1[None, :]] * tx_row
    return top * (1 - ty_col) + bot * ty_col


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # keep the open interval (0, 1) even where exp saturates
    one = x.dtype.type(1)
    zero = x.dtype.type(0)
    return np.clip(out, np.nextafter(zero, one), np.nextafter(one, zero))


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim != b.ndim:
        raise ShapeError(f"elementwise operands need equal rank: {a.ndim} vs {b.ndim}")
    for axis, (da, db) in enumerate(zip(a.shape, b.shape)):
        if da != db and 1 not in (da, db):
            raise ShapeError(f"axis {axis} not broadcastable: {da} vs {db}")


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_broadcast(a, b)
    return a + b


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_broadcast(a, b)
    return a * b


def elementwise(op: str, a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Dispatch for the pointwise operations: add, mul, relu, sigmoid."""
    if op in ("add", "mul"):
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return add(a, b) if op == "add" else mul(a, b)
    if b is not None:
        raise ValueError(f"{op} takes one operand")
    if op == "relu":
        return relu(a)
    if op == "sigmoid":
        return sigmoid(a)
    raise ValueError(f"unknown elementwise op {op!r}")
