"""Standalone reference implementations used as test oracles.

Everything here is written with explicit scalar loops and shares no code
with the package under test. Slow on purpose; only run on tiny shapes.
"""

import math

import numpy as np


def conv2d_loops(x, weights, bias, stride, padding, groups=1):
    """Cross-correlation via six nested scalar loops."""
    b, cin, h, w = x.shape
    cout, cin_g, kh, kw = weights.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    cout_g = cout // groups
    out = np.zeros((b, cout, oh, ow), dtype=x.dtype)
    for n in range(b):
        for co in range(cout):
            g = co // cout_g
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cin_g):
                        for u in range(kh):
                            for v in range(kw):
                                hh = i * stride + u - padding
                                ww = j * stride + v - padding
                                if 0 <= hh < h and 0 <= ww < w:
                                    acc += x[n, g * cin_g + ci, hh, ww] * weights[co, ci, u, v]
                    out[n, co, i, j] = acc + (bias[co] if bias is not None else 0.0)
    return out


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def avg_pool_loops(x, kernel, stride, padding):
    """Windowed mean with zero padding counted in the divisor."""
    b, c, h, w = x.shape
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    out = np.zeros((b, c, oh, ow), dtype=x.dtype)
    for n in range(b):
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for u in range(kernel):
                        for v in range(kernel):
                            hh = i * stride + u - padding
                            ww = j * stride + v - padding
                            if 0 <= hh < h and 0 <= ww < w:
                                acc += x[n, ch, hh, ww]
                    out[n, ch, i, j] = acc / (kernel * kernel)
    return out


def max_pool_loops(x, kernel, stride, padding):
    b, c, h, w = x.shape
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    out = np.full((b, c, oh, ow), -np.inf, dtype=x.dtype)
    for n in range(b):
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    best = -math.inf
                    for u in range(kernel):
                        for v in range(kernel):
                            hh = i * stride + u - padding
                            ww = j * stride + v - padding
                            if 0 <= hh < h and 0 <= ww < w:
                                best = max(best, x[n, ch, hh, ww])
                    out[n, ch, i, j] = best
    return out


def global_avg_loops(x):
    b, c, h, w = x.shape
    out = np.zeros((b, c, 1, 1), dtype=x.dtype)
    for n in range(b):
        for ch in range(c):
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += x[n, ch, i, j]
            out[n, ch, 0, 0] = acc / (h * w)
    return out


def bilinear_scalar(x, out_h, out_w):
    """Half-pixel-center bilinear sampling, one output scalar at a time."""
    b, c, h, w = x.shape
    out = np.zeros((b, c, out_h, out_w), dtype=x.dtype)
    for n in range(b):
        for ch in range(c):
            for i in range(out_h):
                sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
                y0 = int(math.floor(sy))
                y1 = min(y0 + 1, h - 1)
                ty = sy - y0
                for j in range(out_w):
                    sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
                    x0 = int(math.floor(sx))
                    x1 = min(x0 + 1, w - 1)
                    tx = sx - x0
                    top = x[n, ch, y0, x0] * (1 - tx) + x[n, ch, y0, x1] * tx
                    bot = x[n, ch, y1, x0] * (1 - tx) + x[n, ch, y1, x1] * tx
                    out[n, ch, i, j] = top * (1 - ty) + bot * ty
    return out


def broadcast_mul_loops(x, m):
    """x: (B, C, H, W) times a per-position map m: (B, 1, H, W)."""
    b, c, h, w = x.shape
    out = np.zeros_like(x)
    for n in range(b):
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    out[n, ch, i, j] = x[n, ch, i, j] * m[n, 0, i, j]
    return out


def count_confusion(labels, preds, positive=1):
    """Brute-force TP/FP/FN/TN counting over (label, prediction) pairs."""
    tp = fp = fn = tn = 0
    for y, p in zip(labels, preds):
        if p == positive and y == positive:
            tp += 1
        elif p == positive and y != positive:
            fp += 1
        elif p != positive and y == positive:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def metrics_by_formula(tp, fp, fn, tn):
    """The five scores straight from their defining ratios; None when undefined."""
    def ratio(num, den):
        return None if den == 0 else num / den

    recall = ratio(tp, tp + fn)
    specificity = ratio(tn, tn + fp)
    precision = ratio(tp, tp + fp)
    if recall is None or precision is None or (recall + precision) == 0:
        f1 = None
    else:
        f1 = 2 * recall * precision / (recall + precision)
    accuracy = ratio(tp + tn, tp + tn + fp + fn)
    return recall, specificity, precision, f1, accuracy
