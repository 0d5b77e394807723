"""Tensor conventions and the global precision mode.

All values flowing through the network are plain numpy arrays, laid out
row-major with axes ordered (batch, channel, height, width) for 4-D data.
The package runs in one of two global precision modes: float64 for
gradient checking and float32 for training. The mode is selected once per
run and applies to every array created through this module.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

_MODES = {"float32": np.float32, "float64": np.float64}
_state = {"mode": "float32"}


def set_precision(mode: str) -> None:
    """Select the global precision mode ("float32" or "float64")."""
    if mode not in _MODES:
        raise ValueError(f"unknown precision mode {mode!r}; expected one of {sorted(_MODES)}")
    _state["mode"] = mode


def precision() -> str:
    return _state["mode"]


def dtype() -> np.dtype:
    """The numpy dtype of the current precision mode."""
    return np.dtype(_MODES[_state["mode"]])


@contextmanager
def precision_mode(mode: str):
    """Temporarily switch precision; restores the previous mode on exit."""
    prev = _state["mode"]
    set_precision(mode)
    try:
        yield
    finally:
        _state["mode"] = prev


def tensor(data) -> np.ndarray:
    """Materialize `data` as a contiguous array in the current precision."""
    return np.ascontiguousarray(data, dtype=dtype())


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=dtype())


def require_axes(x: np.ndarray, ndim: int, name: str = "input") -> None:
    if x.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} axes, got {x.ndim}")


def conv_out_extent(extent: int, kernel: int, stride: int, padding: int) -> int:
    """Spatial output extent of a convolution/pooling window sweep."""
    out = (extent + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ShapeError(
            f"window of {kernel} with stride {stride} does not fit input extent "
            f"{extent} with padding {padding}"
        )
    return out


@dataclass(frozen=True)
class ConvSpec:
    """Static description of one 2-D convolution.

    `weights` passed alongside a spec must have dims
    (out_channels, in_channels // groups, kernel_h, kernel_w).
    """

    out_channels: int
    in_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.out_channels < 1 or self.in_channels < 1:
            raise ShapeError("channel counts must be >= 1")
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ShapeError("kernel extents must be >= 1")
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ShapeError(f"padding must be >= 0, got {self.padding}")
        if self.groups < 1:
            raise ShapeError(f"groups must be >= 1, got {self.groups}")
        if self.in_channels % self.groups != 0:
            raise ShapeError(
                f"in_channels {self.in_channels} not divisible by groups {self.groups}"
            )
        if self.out_channels % self.groups != 0:
            raise ShapeError(
                f"out_channels {self.out_channels} not divisible by groups {self.groups}"
            )

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        return (
            conv_out_extent(h, self.kernel_h, self.stride, self.padding),
            conv_out_extent(w, self.kernel_w, self.stride, self.padding),
        )

    def weight_shape(self) -> tuple[int, int, int, int]:
        return (
            self.out_channels,
            self.in_channels // self.groups,
            self.kernel_h,
            self.kernel_w,
        )
