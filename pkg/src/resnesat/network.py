"""Full network assembly, presets, parameter counting, shape tracing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import Bottleneck
from .errors import ShapeError
from .layers import BatchNorm2d, Conv2d, GlobalAvgPool, Layer, Linear, MaxPool2d, ReLU
from .tensor import dtype

EXPANSION = 4  # bottleneck output channels = EXPANSION * width


@dataclass
class NetworkConfig:
    """Architecture description: stem plan, stage widths, attention settings."""

    preset: str = "tiny"
    num_classes: int = 2
    in_channels: int = 1
    input_size: int = 64
    stem_channels: tuple = (8, 8, 16)
    stage_channels: tuple = (16, 32, 64, 128)
    repeats: tuple = (1, 1, 1, 1)
    sa_enabled: bool = True
    radix: int = 2
    cardinality: int = 1
    reduction: int = 4
    sa_kernel: int = 7

    @classmethod
    def tiny(cls, num_classes=2, sa_enabled=True) -> "NetworkConfig":
        return cls(preset="tiny", num_classes=num_classes, sa_enabled=sa_enabled)

    @classmethod
    def paper(cls, num_classes=2, sa_enabled=True) -> "NetworkConfig":
        return cls(
            preset="paper",
            num_classes=num_classes,
            in_channels=3,
            input_size=256,
            stem_channels=(32, 32, 64),
            stage_channels=(256, 512, 1024, 2048),
            repeats=(3, 4, 6, 3),
            sa_enabled=sa_enabled,
        )

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "NetworkConfig":
        if name == "tiny":
            cfg = cls.tiny()
        elif name == "paper":
            cfg = cls.paper()
        else:
            raise ShapeError(f"unknown preset {name!r}; expected 'tiny' or 'paper'")
        for key, value in overrides.items():
            setattr(cfg, key, value)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if len(self.stage_channels) != 4 or len(self.repeats) != 4:
            raise ShapeError("stage_channels and repeats must each have 4 entries")
        if len(self.stem_channels) != 3:
            raise ShapeError("stem_channels must have 3 entries")
        if self.num_classes < 2:
            raise ShapeError("num_classes must be >= 2")
        if self.sa_kernel % 2 != 1:
            raise ShapeError("sa_kernel must be odd")
        for ch in self.stage_channels:
            width = ch // EXPANSION
            if width * EXPANSION != ch:
                raise ShapeError(f"stage channels {ch} not divisible by expansion {EXPANSION}")
            if width % (self.cardinality * self.radix) != 0 and width % self.cardinality != 0:
                raise ShapeError(f"stage width {width} incompatible with cardinality/radix")

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "num_classes": str(self.num_classes),
            "in_channels": str(self.in_channels),
            "input_size": str(self.input_size),
            "stem_channels": ",".join(map(str, self.stem_channels)),
            "stage_channels": ",".join(map(str, self.stage_channels)),
            "repeats": ",".join(map(str, self.repeats)),
            "sa_enabled": "1" if self.sa_enabled else "0",
            "radix": str(self.radix),
            "cardinality": str(self.cardinality),
            "reduction": str(self.reduction),
            "sa_kernel": str(self.sa_kernel),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        def ints(key):
            return tuple(int(v) for v in data[key].split(","))

        cfg = cls(
            preset=data["preset"],
            num_classes=int(data["num_classes"]),
            in_channels=int(data["in_channels"]),
            input_size=int(data["input_size"]),
            stem_channels=ints("stem_channels"),
            stage_channels=ints("stage_channels"),
            repeats=ints("repeats"),
            sa_enabled=data["sa_enabled"] == "1",
            radix=int(data["radix"]),
            cardinality=int(data["cardinality"]),
            reduction=int(data["reduction"]),
            sa_kernel=int(data["sa_kernel"]),
        )
        cfg.validate()
        return cfg


class Network(Layer):
    """Stem, four bottleneck stages, global pooling, and the classifier head."""

    def __init__(self, config: NetworkConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        s0, s1, s2 = config.stem_channels

        self.layers["stem_conv1"] = Conv2d(config.in_channels, s0, 3, stride=2,
                                           padding=1, bias=False, rng=rng)
        self.layers["stem_bn1"] = BatchNorm2d(s0)
        self.layers["stem_act1"] = ReLU()
        self.layers["stem_conv2"] = Conv2d(s0, s1, 3, stride=1, padding=1, bias=False, rng=rng)
        self.layers["stem_bn2"] = BatchNorm2d(s1)
        self.layers["stem_act2"] = ReLU()
        self.layers["stem_conv3"] = Conv2d(s1, s2, 3, stride=1, padding=1, bias=False, rng=rng)
        self.layers["stem_bn3"] = BatchNorm2d(s2)
        self.layers["stem_act3"] = ReLU()
        self.layers["stem_pool"] = MaxPool2d(3, stride=2, padding=1)

        in_ch = s2
        self.stage_names: list[list[str]] = []
        for stage, (out_ch, repeat) in enumerate(zip(config.stage_channels, config.repeats)):
            width = out_ch // EXPANSION
            names = []
            for block in range(repeat):
                stride = 2 if (stage > 0 and block == 0) else 1
                name = f"stage{stage + 1}.block{block}"
                self.layers[name] = Bottleneck(
                    in_ch, width, out_ch, stride=stride,
                    radix=config.radix, cardinality=config.cardinality,
                    reduction=config.reduction, sa_kernel=config.sa_kernel,
                    sa_enabled=config.sa_enabled, rng=rng)
                names.append(name)
                in_ch = out_ch
            self.stage_names.append(names)

        self.layers["gap"] = GlobalAvgPool()
        self.layers["fc"] = Linear(config.stage_channels[3], config.num_classes, rng=rng)

    def forward(self, x, train=False, record=None):
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"network expects (B, {self.config.in_channels}, H, W), got {x.shape}")
        if record is not None:
            record.append(("input", x.shape))
        h = x
        for idx in (1, 2, 3):
            h = self.layers[f"stem_conv{idx}"].forward(h, train)
            h = self.layers[f"stem_bn{idx}"].forward(h, train)
            h = self.layers[f"stem_act{idx}"].forward(h, train)
            if record is not None:
                record.append((f"stem_conv{idx}", h.shape))
        h = self.layers["stem_pool"].forward(h, train)
        if record is not None:
            record.append(("stem_pool", h.shape))
        for stage, names in enumerate(self.stage_names):
            for name in names:
                h = self.layers[name].forward(h, train)
            if record is not None:
                record.append((f"stage{stage + 1}", h.shape))
        h = self.layers["gap"].forward(h, train)
        if record is not None:
            record.append(("gap", h.shape))
        self._ctx = h.shape
        flat = h.reshape(h.shape[0], -1)
        logits = self.layers["fc"].forward(flat, train)
        if record is not None:
            record.append(("fc", logits.shape))
        return logits

    def backward(self, grad_logits):
        gap_shape = self._take_ctx()
        g = self.layers["fc"].backward(grad_logits).reshape(gap_shape)
        g = self.layers["gap"].backward(g)
        for names in reversed(self.stage_names):
            for name in reversed(names):
                g = self.layers[name].backward(g)
        g = self.layers["stem_pool"].backward(g)
        for idx in (3, 2, 1):
            g = self.layers[f"stem_act{idx}"].backward(g)
            g = self.layers[f"stem_bn{idx}"].backward(g)
            g = self.layers[f"stem_conv{idx}"].backward(g)
        return g

    def shape_trace(self) -> list:
        """Named output shapes at every stage boundary for a single dummy input."""
        record: list = []
        x = np.zeros((1, self.config.in_channels, self.config.input_size,
                      self.config.input_size), dtype=dtype())
        self.forward(x, train=False, record=record)
        self._ctx = None
        return record


def build_network(config: NetworkConfig, seed: int = 0) -> Network:
    return Network(config, seed=seed)


def parameter_count(network: Network) -> tuple[int, int]:
    """Total entries across trainable and batch-norm statistic tensors, and bytes at 32-bit."""
    count = sum(p.size for _, p in network.named_parameters())
    return count, 4 * count


def sa_parameter_overhead(config: NetworkConfig) -> int:
    """Parameter difference between the network with and without spatial attention."""
    with_sa = NetworkConfig(**{**config.__dict__, "sa_enabled": True})
    without = NetworkConfig(**{**config.__dict__, "sa_enabled": False})
    return parameter_count(build_network(with_sa))[0] - parameter_count(build_network(without))[0]


def describe(network: Network) -> list[dict]:
    """Per-boundary rows for the inspect command: name, output shape, parameters.

    Stem batch-norm parameters are folded into their conv's row, so the rows
    sum to the full parameter count.
    """
    totals: dict[str, int] = {}
    for name, p in network.named_parameters():
        top = name.split(".")[0]
        totals[top] = totals.get(top, 0) + p.size

    rows = []
    for name, shape in network.shape_trace():
        params = totals.get(name, 0)
        if name.startswith("stem_conv"):
            params += totals.get(f"stem_bn{name[-1]}", 0)
        rows.append({"name": name, "shape": shape, "params": params})
    return rows
