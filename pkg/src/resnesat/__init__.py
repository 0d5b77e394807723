"""From-scratch split-attention residual network with spatial attention.

Dense numpy kernels with naive reference twins, explicit forward/backward
layers, the full network with presets, a phantom-image data pipeline,
SGD training with cosine decay, k-fold cross-validation, and a CLI.
"""

from .attention import Bottleneck, SpatialAttention, SplAtConv2d
from .data import (DatasetManifest, FoldSplit, NormStats, SampleRecord,
                   load_manifest, make_folds, preprocess)
from .gradcheck import gradient_check
from .metrics import ConfusionMatrix, MetricsReport
from .network import Network, NetworkConfig, build_network, parameter_count
from .checkpoint import load_checkpoint, save_checkpoint
from .tensor import ConvSpec, precision, precision_mode, set_precision
from .training import TrainingConfig, cosine_lr, cross_validate, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Bottleneck", "SpatialAttention", "SplAtConv2d",
    "DatasetManifest", "FoldSplit", "NormStats", "SampleRecord",
    "load_manifest", "make_folds", "preprocess",
    "gradient_check",
    "ConfusionMatrix", "MetricsReport",
    "Network", "NetworkConfig", "build_network", "parameter_count",
    "load_checkpoint", "save_checkpoint",
    "ConvSpec", "precision", "precision_mode", "set_precision",
    "TrainingConfig", "cosine_lr", "cross_validate", "evaluate", "train",
    "__version__",
]
