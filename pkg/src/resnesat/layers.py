"""Trainable layers with explicit forward/backward passes.

The network topology is static, so there is no autodiff tape: each layer
caches exactly the intermediates its backward pass needs, and composites
call backwards in reverse order. A context is valid for one backward only;
calling backward twice (or before any forward) raises.

Gradients accumulate additively into Parameter.grad so micro-batch
accumulation works; callers zero grads between optimizer steps.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeError
from .tensor import ConvSpec, dtype


class Parameter:
    """A named learnable array paired with its gradient accumulator."""

    def __init__(self, value: np.ndarray, trainable: bool = True):
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad.fill(0)


class Layer:
    """Base class: own parameters in `params`, sublayers in `layers` (both ordered)."""

    def __init__(self):
        self.params: dict[str, Parameter] = {}
        self.layers: dict[str, Layer] = {}
        self._ctx = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        return self.forward(x, train)

    def named_parameters(self, prefix: str = ""):
        for name, p in self.params.items():
            yield prefix + name, p
        for lname, layer in self.layers.items():
            yield from layer.named_parameters(prefix + lname + ".")

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()

    def _take_ctx(self):
        if self._ctx is None:
            raise RuntimeError(
                f"{type(self).__name__}.backward called without a matching forward"
            )
        ctx, self._ctx = self._ctx, None
        return ctx


def kaiming_conv_init(rng: np.random.Generator, spec: ConvSpec) -> np.ndarray:
    """Fan-out scaled normal init for convolution weights."""
    fan_out = spec.out_channels * spec.kernel_h * spec.kernel_w // spec.groups
    std = np.sqrt(2.0 / fan_out)
    return (rng.standard_normal(spec.weight_shape()) * std).astype(dtype())


class Conv2d(Layer):
    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0,
                 groups=1, bias=True, rng=None):
        super().__init__()
        self.spec = ConvSpec(out_channels, in_channels, kernel, kernel,
                             stride=stride, padding=padding, groups=groups)
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = Parameter(kaiming_conv_init(rng, self.spec))
        if bias:
            self.params["bias"] = Parameter(np.zeros(out_channels, dtype=dtype()))

    def forward(self, x, train=False):
        spec = self.spec
        w = self.params["weight"].value
        b = self.params["bias"].value if "bias" in self.params else None
        kernels._check_conv_args(x, w, b, spec)
        bsz, _, h, w_in = x.shape
        oh, ow = spec.out_hw(h, w_in)
        cin_g = spec.in_channels // spec.groups
        cout_g = spec.out_channels // spec.groups
        out = np.empty((bsz, spec.out_channels, oh, ow), dtype=x.dtype)
        cols_per_group = []
        for g in range(spec.groups):
            cols = kernels.im2col(x[:, g * cin_g:(g + 1) * cin_g],
                                  spec.kernel_h, spec.kernel_w, spec.stride, spec.padding)
            cols_per_group.append(cols)
            wmat = w[g * cout_g:(g + 1) * cout_g].reshape(cout_g, -1)
            out[:, g * cout_g:(g + 1) * cout_g] = (wmat @ cols).reshape(bsz, cout_g, oh, ow)
        if b is not None:
            out += b.reshape(1, -1, 1, 1)
        self._ctx = (x.shape, cols_per_group, oh, ow)
        return out

    def backward(self, grad_out):
        x_shape, cols_per_group, oh, ow = self._take_ctx()
        spec = self.spec
        bsz = x_shape[0]
        cin_g = spec.in_channels // spec.groups
        cout_g = spec.out_channels // spec.groups
        w = self.params["weight"].value
        if "bias" in self.params:
            self.params["bias"].grad += grad_out.sum(axis=(0, 2, 3))
        grad_x = np.empty(x_shape, dtype=grad_out.dtype)
        for g in range(spec.groups):
            gmat = grad_out[:, g * cout_g:(g + 1) * cout_g].reshape(bsz, cout_g, oh * ow)
            cols = cols_per_group[g]
            # (B, cout_g, L) @ (B, L, K) summed over the batch
            gw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0)
            self.params["weight"].grad[g * cout_g:(g + 1) * cout_g] += gw.reshape(
                cout_g, cin_g, spec.kernel_h, spec.kernel_w)
            wmat = w[g * cout_g:(g + 1) * cout_g].reshape(cout_g, -1)
            gcols = np.matmul(wmat.T, gmat)
            grad_x[:, g * cin_g:(g + 1) * cin_g] = kernels.col2im(
                gcols, (bsz, cin_g) + x_shape[2:], spec.kernel_h, spec.kernel_w,
                spec.stride, spec.padding)
        return grad_x


class BatchNorm2d(Layer):
    """Per-channel batch normalization with running statistics.

    Train mode normalizes with batch statistics (biased variance) and updates
    the running estimates by exponential moving average; eval mode uses the
    running estimates. Train mode requires batch size >= 2.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = Parameter(np.ones(channels, dtype=dtype()))
        self.params["beta"] = Parameter(np.zeros(channels, dtype=dtype()))
        self.params["running_mean"] = Parameter(np.zeros(channels, dtype=dtype()), trainable=False)
        self.params["running_var"] = Parameter(np.ones(channels, dtype=dtype()), trainable=False)

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"batch norm expects (B, {self.channels}, H, W), got {x.shape}")
        gamma = self.params["gamma"].value.reshape(1, -1, 1, 1)
        beta = self.params["beta"].value.reshape(1, -1, 1, 1)
        if train:
            if x.shape[0] < 2:
                raise ValueError(
                    f"train-mode batch norm needs batch size >= 2, got {x.shape[0]}"
                )
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = x.dtype.type(self.momentum)
            rm = self.params["running_mean"].value
            rv = self.params["running_var"].value
            rm *= 1 - m
            rm += m * mean
            rv *= 1 - m
            rv += m * var
        else:
            mean = self.params["running_mean"].value
            var = self.params["running_var"].value
        inv_std = 1.0 / np.sqrt(var + x.dtype.type(self.eps))
        xhat = (x - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
        self._ctx = (xhat, inv_std, train, x.shape)
        return gamma * xhat + beta

    def backward(self, grad_out):
        xhat, inv_std, train, x_shape = self._take_ctx()
        gamma = self.params["gamma"].value
        self.params["beta"].grad += grad_out.sum(axis=(0, 2, 3))
        self.params["gamma"].grad += (grad_out * xhat).sum(axis=(0, 2, 3))
        scale = (gamma * inv_std).reshape(1, -1, 1, 1)
        if not train:
            return grad_out * scale
        n = x_shape[0] * x_shape[2] * x_shape[3]
        mean_g = grad_out.mean(axis=(0, 2, 3), keepdims=True)
        mean_gx = (grad_out * xhat).sum(axis=(0, 2, 3), keepdims=True) / n
        return scale * (grad_out - mean_g - xhat * mean_gx)


class ReLU(Layer):
    def forward(self, x, train=False):
        mask = x > 0
        self._ctx = mask
        return np.where(mask, x, x.dtype.type(0))

    def backward(self, grad_out):
        mask = self._take_ctx()
        return np.where(mask, grad_out, grad_out.dtype.type(0))


class Sigmoid(Layer):
    def forward(self, x, train=False):
        y = kernels.sigmoid(x)
        self._ctx = y
        return y

    def backward(self, grad_out):
        y = self._take_ctx()
        return grad_out * y * (1 - y)


class MaxPool2d(Layer):
    def __init__(self, kernel, stride=None, padding=0):
        super().__init__()
        self.kernel = kernel
        self.stride = stride if stride is not None else kernel
        self.padding = padding

    def forward(self, x, train=False):
        out, idx = kernels.max_pool2d(x, self.kernel, self.stride, self.padding)
        self._ctx = (idx, x.shape)
        return out

    def backward(self, grad_out):
        idx, x_shape = self._take_ctx()
        b, c, h, w = x_shape
        k, s, p = self.kernel, self.stride, self.padding
        _, _, oh, ow = grad_out.shape
        gp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=grad_out.dtype)
        bi, ci, oi, oj = np.indices(idx.shape, sparse=True)
        hi = oi * s + idx // k
        wj = oj * s + idx % k
        np.add.at(gp, (bi, ci, hi, wj), grad_out)
        if p == 0:
            return gp
        return gp[:, :, p:p + h, p:p + w]


class AvgPool2d(Layer):
    def __init__(self, kernel, stride=None, padding=0):
        super().__init__()
        self.kernel = kernel
        self.stride = stride if stride is not None else kernel
        self.padding = padding

    def forward(self, x, train=False):
        self._ctx = x.shape
        return kernels.avg_pool2d(x, self.kernel, self.stride, self.padding)

    def backward(self, grad_out):
        x_shape = self._take_ctx()
        b, c, h, w = x_shape
        k, s, p = self.kernel, self.stride, self.padding
        _, _, oh, ow = grad_out.shape
        share = grad_out / (k * k)
        gp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=grad_out.dtype)
        for i in range(k):
            for j in range(k):
                gp[:, :, i:i + s * oh:s, j:j + s * ow:s] += share
        if p == 0:
            return gp
        return gp[:, :, p:p + h, p:p + w]


class GlobalAvgPool(Layer):
    def forward(self, x, train=False):
        self._ctx = x.shape
        return kernels.global_avg_pool(x)

    def backward(self, grad_out):
        x_shape = self._take_ctx()
        area = x_shape[2] * x_shape[3]
        return np.broadcast_to(grad_out / area, x_shape).copy()


class Linear(Layer):
    def __init__(self, in_features, out_features, bias=True, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        std = 1.0 / np.sqrt(in_features)
        self.params["weight"] = Parameter(
            (rng.standard_normal((out_features, in_features)) * std).astype(dtype()))
        if bias:
            self.params["bias"] = Parameter(np.zeros(out_features, dtype=dtype()))

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.params["weight"].value.shape[1]:
            raise ShapeError(
                f"linear expects (B, {self.params['weight'].value.shape[1]}), got {x.shape}"
            )
        self._ctx = x
        out = x @ self.params["weight"].value.T
        if "bias" in self.params:
            out += self.params["bias"].value
        return out

    def backward(self, grad_out):
        x = self._take_ctx()
        self.params["weight"].grad += grad_out.T @ x
        if "bias" in self.params:
            self.params["bias"].grad += grad_out.sum(axis=0)
        return grad_out @ self.params["weight"].value


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood and its gradient w.r.t. the logits.

    Returns (loss, grad_logits) with grad = (softmax - onehot) / batch.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (B, C), got {logits.shape}")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c}): {labels.min()}..{labels.max()}")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsumexp - z[np.arange(n), labels]))
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1
    grad /= n
    return loss, grad.astype(logits.dtype)
