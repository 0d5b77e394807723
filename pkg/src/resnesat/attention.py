"""Attention blocks: split-attention convolution, spatial attention, bottleneck.

Channel layout convention for the split-attention block: the grouped
convolution emits radix * channels features ordered branch-major, so branch
r occupies channels [r*channels, (r+1)*channels). Attention logits leave
the second dense layer grouped by cardinality; the radix softmax reshapes
(B, K, R, C/K) -> transpose -> softmax over the radix axis -> flatten,
yielding weights in the same branch-major order as the branches.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeError
from .layers import AvgPool2d, BatchNorm2d, Conv2d, Layer, ReLU


def splat_inter_channels(channels: int, radix: int, cardinality: int, reduction: int) -> int:
    """Width of the attention bottleneck: channels*R/(r*K) rounded to a K multiple, min 32."""
    inter = max((channels * radix) // (reduction * cardinality) * cardinality, 32)
    return ((inter + cardinality - 1) // cardinality) * cardinality


def radix_softmax(logits: np.ndarray, radix: int, cardinality: int) -> np.ndarray:
    """Softmax across the radix axis per output channel; sigmoid when radix is 1.

    Input layout is cardinality-major (as produced by the grouped dense
    layer); output layout is branch-major.
    """
    b = logits.shape[0]
    flat = logits.reshape(b, -1)
    if radix == 1:
        return kernels.sigmoid(flat)
    t = flat.reshape(b, cardinality, radix, -1).transpose(0, 2, 1, 3)
    t = t - t.max(axis=1, keepdims=True)
    e = np.exp(t)
    a = e / e.sum(axis=1, keepdims=True)
    return a.reshape(b, -1)


def radix_softmax_backward(grad_att, att, radix: int, cardinality: int) -> np.ndarray:
    """Gradient of radix_softmax; returns grads in the input (cardinality-major) layout."""
    b = att.shape[0]
    if radix == 1:
        return grad_att * att * (1 - att)
    a = att.reshape(b, radix, cardinality, -1)
    g = grad_att.reshape(b, radix, cardinality, -1)
    inner = (a * g).sum(axis=1, keepdims=True)
    dt = a * (g - inner)
    return dt.transpose(0, 2, 1, 3).reshape(b, -1)


class SplAtConv2d(Layer):
    """Grouped convolution whose radix branches are fused by learned channel weights.

    Forward: grouped 3x3 conv -> split into radix branches -> branch sum ->
    global average pool -> dense/BN/ReLU/dense -> radix softmax -> weighted
    branch sum.
    """

    def __init__(self, in_channels, channels, kernel=3, stride=1, padding=1,
                 radix=2, cardinality=1, reduction=4, rng=None):
        super().__init__()
        if radix < 1 or cardinality < 1 or reduction < 1:
            raise ShapeError("radix, cardinality and reduction must be >= 1")
        if channels % cardinality != 0:
            raise ShapeError(f"channels {channels} not divisible by cardinality {cardinality}")
        self.radix = radix
        self.cardinality = cardinality
        self.channels = channels
        inter = splat_inter_channels(channels, radix, cardinality, reduction)
        self.layers["conv"] = Conv2d(in_channels, channels * radix, kernel,
                                     stride=stride, padding=padding,
                                     groups=cardinality * radix, bias=True, rng=rng)
        self.layers["fc1"] = Conv2d(channels, inter, 1, groups=cardinality, bias=True, rng=rng)
        self.layers["bn1"] = BatchNorm2d(inter)
        self.layers["act"] = ReLU()
        self.layers["fc2"] = Conv2d(inter, channels * radix, 1, groups=cardinality,
                                    bias=True, rng=rng)

    def forward(self, x, train=False):
        r, c = self.radix, self.channels
        u = self.layers["conv"].forward(x, train)
        b, _, h, w = u.shape
        branches = u.reshape(b, r, c, h, w)
        s = branches.sum(axis=1)
        pooled = kernels.global_avg_pool(s)
        a = self.layers["fc1"].forward(pooled, train)
        a = self.layers["bn1"].forward(a, train)
        a = self.layers["act"].forward(a, train)
        logits = self.layers["fc2"].forward(a, train)
        att = radix_softmax(logits, r, self.cardinality)
        att_b = att.reshape(b, r, c, 1, 1)
        out = (branches * att_b).sum(axis=1)
        self._ctx = (branches, att, (h, w))
        return out

    def backward(self, grad_out):
        branches, att, (h, w) = self._take_ctx()
        r, c = self.radix, self.channels
        b = branches.shape[0]
        att_b = att.reshape(b, r, c, 1, 1)
        g_branches = att_b * grad_out[:, None]
        g_att = (branches * grad_out[:, None]).sum(axis=(3, 4)).reshape(b, r * c)
        g_logits = radix_softmax_backward(g_att, att, r, self.cardinality)
        g_a = self.layers["fc2"].backward(g_logits.reshape(b, -1, 1, 1))
        g_a = self.layers["act"].backward(g_a)
        g_a = self.layers["bn1"].backward(g_a)
        g_pooled = self.layers["fc1"].backward(g_a)
        g_s = np.broadcast_to(g_pooled / (h * w), (b, c, h, w))
        g_branches = g_branches + g_s[:, None]
        return self.layers["conv"].backward(g_branches.reshape(b, r * c, h, w))


class SpatialAttention(Layer):
    """Per-position (0,1) attention map from channel mean/max statistics.

    The map is the sigmoid of a kxk convolution over the 2-channel stack of
    the channel-wise mean map and max map, applied multiplicatively to the
    input. Setting `override_map` freezes the map to a constant (no
    gradients flow through the map path) — used for ablations.
    """

    def __init__(self, kernel=7, rng=None):
        super().__init__()
        if kernel % 2 != 1:
            raise ShapeError(f"spatial attention kernel must be odd, got {kernel}")
        self.kernel = kernel
        self.layers["conv"] = Conv2d(2, 1, kernel, stride=1, padding=(kernel - 1) // 2,
                                     bias=True, rng=rng)
        self.override_map = None
        self.last_map = None

    def forward(self, x, train=False):
        if self.override_map is not None:
            m = np.broadcast_to(np.asarray(self.override_map, dtype=x.dtype),
                                (x.shape[0], 1) + x.shape[2:])
            self._ctx = ("frozen", m)
            self.last_map = m
            return x * m
        mean_map = x.mean(axis=1, keepdims=True)
        max_map = x.max(axis=1, keepdims=True)
        argmax = x.argmax(axis=1)
        stacked = np.concatenate([mean_map, max_map], axis=1)
        m = kernels.sigmoid(self.layers["conv"].forward(stacked, train))
        self._ctx = ("live", x, m, argmax)
        self.last_map = m
        return x * m

    def backward(self, grad_out):
        ctx = self._take_ctx()
        if ctx[0] == "frozen":
            return grad_out * ctx[1]
        _, x, m, argmax = ctx
        channels = x.shape[1]
        grad_x = grad_out * m
        g_m = (grad_out * x).sum(axis=1, keepdims=True)
        g_pre = g_m * m * (1 - m)
        g_stacked = self.layers["conv"].backward(g_pre)
        grad_x = grad_x + g_stacked[:, 0:1] / channels
        g_max = np.zeros_like(x)
        np.put_along_axis(g_max, argmax[:, None], g_stacked[:, 1:2], axis=1)
        return grad_x + g_max


class Bottleneck(Layer):
    """Residual bottleneck with split-attention conv and optional spatial attention.

    Main path: 1x1 conv -> BN -> ReLU -> [3x3 stride-s avg pool when s > 1]
    -> SplAtConv (stride 1) -> 1x1 conv -> BN -> SA. Shortcut: identity, or
    [avg pool when s > 1] -> 1x1 conv -> BN when shape changes. Output is
    ReLU(main + shortcut).
    """

    def __init__(self, in_channels, width, out_channels, stride=1, radix=2,
                 cardinality=1, reduction=4, sa_kernel=7, sa_enabled=True, rng=None):
        super().__init__()
        self.stride = stride
        self.sa_enabled = sa_enabled
        self.has_shortcut = stride != 1 or in_channels != out_channels
        self.layers["conv1"] = Conv2d(in_channels, width, 1, bias=False, rng=rng)
        self.layers["bn1"] = BatchNorm2d(width)
        self.layers["act1"] = ReLU()
        if stride != 1:
            self.layers["pool"] = AvgPool2d(3, stride=stride, padding=1)
        self.layers["splat"] = SplAtConv2d(width, width, kernel=3, stride=1, padding=1,
                                           radix=radix, cardinality=cardinality,
                                           reduction=reduction, rng=rng)
        self.layers["conv2"] = Conv2d(width, out_channels, 1, bias=False, rng=rng)
        self.layers["bn2"] = BatchNorm2d(out_channels)
        if sa_enabled:
            self.layers["sa"] = SpatialAttention(sa_kernel, rng=rng)
        if self.has_shortcut:
            if stride != 1:
                self.layers["shortcut_pool"] = AvgPool2d(3, stride=stride, padding=1)
            self.layers["shortcut_conv"] = Conv2d(in_channels, out_channels, 1,
                                                  bias=False, rng=rng)
            self.layers["shortcut_bn"] = BatchNorm2d(out_channels)
        self.layers["act_out"] = ReLU()

    def forward(self, x, train=False):
        m = self.layers["conv1"].forward(x, train)
        m = self.layers["bn1"].forward(m, train)
        m = self.layers["act1"].forward(m, train)
        if "pool" in self.layers:
            m = self.layers["pool"].forward(m, train)
        m = self.layers["splat"].forward(m, train)
        m = self.layers["conv2"].forward(m, train)
        m = self.layers["bn2"].forward(m, train)
        if "sa" in self.layers:
            m = self.layers["sa"].forward(m, train)
        if self.has_shortcut:
            s = x
            if "shortcut_pool" in self.layers:
                s = self.layers["shortcut_pool"].forward(s, train)
            s = self.layers["shortcut_conv"].forward(s, train)
            s = self.layers["shortcut_bn"].forward(s, train)
        else:
            s = x
        return self.layers["act_out"].forward(m + s, train)

    def backward(self, grad_out):
        g = self.layers["act_out"].backward(grad_out)
        gm = g
        if "sa" in self.layers:
            gm = self.layers["sa"].backward(gm)
        gm = self.layers["bn2"].backward(gm)
        gm = self.layers["conv2"].backward(gm)
        gm = self.layers["splat"].backward(gm)
        if "pool" in self.layers:
            gm = self.layers["pool"].backward(gm)
        gm = self.layers["act1"].backward(gm)
        gm = self.layers["bn1"].backward(gm)
        gm = self.layers["conv1"].backward(gm)
        if self.has_shortcut:
            gs = self.layers["shortcut_bn"].backward(g)
            gs = self.layers["shortcut_conv"].backward(gs)
            if "shortcut_pool" in self.layers:
                gs = self.layers["shortcut_pool"].backward(gs)
        else:
            gs = g
        return gm + gs
