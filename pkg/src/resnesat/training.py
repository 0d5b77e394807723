"""SGD training with a cosine learning-rate schedule, evaluation, and k-fold CV.

Training is deterministic per seed in single-threaded mode: shuffles,
flips, and initialization all derive from explicit seed material, and each
image's augmentation generator is keyed by (seed, fold, epoch, image), so
any batch partitioning or fold-level parallelism reproduces the serial run.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .data import (DatasetManifest, FoldSplit, NormStats, compute_norm_stats,
                   flip_horizontal)
from .errors import ConfigError, DataError, DivergenceError
from .layers import softmax_cross_entropy
from .metrics import ConfusionMatrix, MetricsReport, aggregate_reports, pooled_confusion
from .network import Network, NetworkConfig, build_network
from .phantom import load_image
from .tensor import dtype

DEFAULT_LR = {"presence": 1e-3, "source": 1e-4}


@dataclass
class TrainingConfig:
    task: str = "presence"
    lr0: float | None = None  # None -> per-task default
    epochs: int = 100
    batch_size: int = 16
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.task not in DEFAULT_LR:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.lr0 is None:
            self.lr0 = DEFAULT_LR[self.task]
        if self.lr0 < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr0}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")


def cosine_lr(epoch: int, cfg: TrainingConfig) -> float:
    """Half-cosine decay from lr0 at epoch 0 to zero at the final epoch count."""
    if not 0 <= epoch <= cfg.epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    return 0.5 * (1.0 + math.cos(epoch * math.pi / cfg.epochs)) * cfg.lr0


class SGD:
    """Momentum SGD with decoupled-from-nothing classic weight decay.

    velocity = momentum * velocity + grad + weight_decay * value
    value   -= lr * velocity
    Gradients are zeroed after each step.
    """

    def __init__(self, network: Network, momentum: float = 0.9, weight_decay: float = 1e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.network = network
        self.velocity = {
            name: np.zeros_like(p.value)
            for name, p in network.named_parameters() if p.trainable
        }

    def step(self, lr: float) -> None:
        m = self.momentum
        wd = self.weight_decay
        for name, p in self.network.named_parameters():
            if not p.trainable:
                continue
            v = self.velocity[name]
            v *= m
            v += p.grad
            if wd:
                v += wd * p.value
            p.value -= lr * v
            p.grad.fill(0)

    def state_dict(self) -> dict:
        return {name: v.copy() for name, v in self.velocity.items()}

    def load_state(self, state: dict) -> None:
        for name, v in state.items():
            if name in self.velocity:
                self.velocity[name][:] = v


@dataclass
class EpochLog:
    epoch: int
    lr: float
    mean_loss: float
    train_accuracy: float


@dataclass
class FoldResult:
    fold: int
    confusion: ConfusionMatrix
    report: MetricsReport
    log: list
    stats: NormStats


@dataclass
class CrossValResult:
    fold_results: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    micro: MetricsReport | None = None

    @property
    def reports(self):
        return [fr.report for fr in self.fold_results]


def load_images(manifest: DatasetManifest, data_root, out_size: int,
                out_channels: int) -> np.ndarray:
    """Read, resize, and channel-replicate every manifest image (no normalization)."""
    from . import kernels

    out = np.empty((len(manifest), out_channels, out_size, out_size), dtype=dtype())
    for i, record in enumerate(manifest.records):
        img = load_image(os.path.join(data_root, record.image_path)).astype(dtype())
        if img.shape[0] == 1 and out_channels > 1:
            img = np.repeat(img, out_channels, axis=0)
        if img.shape[1] != out_size or img.shape[2] != out_size:
            img = kernels.bilinear_resize(img[None], out_size, out_size)[0]
        out[i] = img
    return out


def flip_decision(seed: int, fold: int, epoch: int, image_index: int) -> bool:
    """Per-image augmentation draw, independent of batch scheduling."""
    return np.random.default_rng([seed, fold, epoch, image_index]).random() < 0.5


def predictions_from_logits(logits: np.ndarray) -> np.ndarray:
    """Argmax decisions; ties resolve to the lower (negative) class index."""
    return np.argmax(logits, axis=1)


def train(network: Network, manifest: DatasetManifest, data_root,
          folds: FoldSplit, fold_index: int, cfg: TrainingConfig,
          images: np.ndarray | None = None):
    """Train on every fold except `fold_index`; returns (stats, logs, optimizer).

    A zero learning rate makes the whole run a no-op on the model: forward
    passes execute in eval mode (so running statistics stay untouched) and
    no optimizer steps are taken.
    """
    train_idx = np.array(folds.train_indices(fold_index), dtype=np.intp)
    if train_idx.size == 0:
        raise DataError(f"fold {fold_index}: empty training set")
    net_cfg = network.config
    if images is None:
        images = load_images(manifest, data_root, net_cfg.input_size, net_cfg.in_channels)
    labels = manifest.labels()

    stats = compute_norm_stats(images[train_idx], provenance=f"train-fold-{fold_index}")
    normalized = (images - stats.mean.reshape(1, -1, 1, 1)) / stats.std.reshape(1, -1, 1, 1)

    optimizer = SGD(network, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    updates_enabled = cfg.lr0 > 0
    logs = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg)
        order = train_idx[np.random.default_rng(
            [cfg.seed, fold_index, epoch]).permutation(train_idx.size)]
        total_loss = 0.0
        correct = 0
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            xb = normalized[batch].copy()
            for row, idx in enumerate(batch):
                if flip_decision(cfg.seed, fold_index, epoch, int(idx)):
                    xb[row] = flip_horizontal(xb[row])
            yb = labels[batch]
            logits = network.forward(xb, train=updates_enabled)
            loss, grad = softmax_cross_entropy(logits, yb)
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss {loss} at epoch {epoch}, batch {start // cfg.batch_size} "
                    f"(fold {fold_index})")
            total_loss += loss * batch.size
            correct += int(np.sum(predictions_from_logits(logits) == yb))
            if updates_enabled:
                network.backward(grad)
                optimizer.step(lr)
            else:
                network._ctx = None
        logs.append(EpochLog(epoch=epoch, lr=lr,
                             mean_loss=total_loss / order.size,
                             train_accuracy=correct / order.size))
    return stats, logs, optimizer


def evaluate(network: Network, manifest: DatasetManifest, data_root,
             indices, stats: NormStats, images: np.ndarray | None = None,
             batch_size: int = 64):
    """Eval-mode predictions over `indices`; returns (ConfusionMatrix, MetricsReport)."""
    net_cfg = network.config
    if images is None:
        images = load_images(manifest, data_root, net_cfg.input_size, net_cfg.in_channels)
    indices = np.asarray(list(indices), dtype=np.intp)
    labels = manifest.labels()[indices]
    normalized = (images[indices] - stats.mean.reshape(1, -1, 1, 1)) / stats.std.reshape(1, -1, 1, 1)
    preds = np.empty(indices.size, dtype=np.int64)
    for start in range(0, indices.size, batch_size):
        logits = network.forward(normalized[start:start + batch_size], train=False)
        preds[start:start + batch_size] = predictions_from_logits(logits)
    cm = ConfusionMatrix.from_predictions(labels, preds, positive=1,
                                          positive_name=manifest.positive_name)
    return cm, MetricsReport.from_confusion(cm)


def run_fold(net_config: NetworkConfig, cfg: TrainingConfig, manifest: DatasetManifest,
             data_root, folds: FoldSplit, fold_index: int,
             images: np.ndarray | None = None, checkpoint_path=None) -> FoldResult:
    """Train one fold's model and evaluate it on the held-out fold."""
    network = build_network(net_config, seed=[cfg.seed, fold_index])
    try:
        stats, logs, optimizer = train(network, manifest, data_root, folds,
                                       fold_index, cfg, images=images)
        cm, report = evaluate(network, manifest, data_root,
                              folds.test_indices(fold_index), stats, images=images)
    except DivergenceError as exc:
        raise DivergenceError(f"fold {fold_index}: {exc}") from None
    if checkpoint_path is not None:
        save_checkpoint(network, checkpoint_path, epoch=cfg.epochs,
                        optimizer_state=optimizer.state_dict(),
                        preproc={"norm_mean": stats.mean, "norm_std": stats.std})
    return FoldResult(fold=fold_index, confusion=cm, report=report, log=logs, stats=stats)


def cross_validate(net_config: NetworkConfig, cfg: TrainingConfig,
                   manifest: DatasetManifest, data_root, folds: FoldSplit,
                   parallel_folds: int = 1, checkpoint_dir=None) -> CrossValResult:
    """Train k models, one per held-out fold, and aggregate their metrics."""
    images = load_images(manifest, data_root, net_config.input_size, net_config.in_channels)

    def ckpt_path(fold):
        if checkpoint_dir is None:
            return None
        return os.path.join(checkpoint_dir, f"fold{fold:02d}.ckpt")

    if parallel_folds > 1:
        with ThreadPoolExecutor(max_workers=parallel_folds) as pool:
            futures = [
                pool.submit(run_fold, net_config, cfg, manifest, data_root, folds,
                            fold, images, ckpt_path(fold))
                for fold in range(folds.k)
            ]
            fold_results = [f.result() for f in futures]
    else:
        fold_results = [
            run_fold(net_config, cfg, manifest, data_root, folds, fold, images,
                     ckpt_path(fold))
            for fold in range(folds.k)
        ]

    result = CrossValResult(fold_results=fold_results)
    result.aggregate = aggregate_reports(result.reports)
    result.micro = MetricsReport.from_confusion(
        pooled_confusion([fr.confusion for fr in fold_results]))
    return result


def holdout_run(net_config: NetworkConfig, cfg: TrainingConfig,
                manifest: DatasetManifest, data_root, fraction: float) -> FoldResult:
    """Single stratified train/test split (e.g. 0.2 for an 80/20 protocol)."""
    from .data import holdout_split

    train_idx, test_idx = holdout_split(manifest, fraction, seed=cfg.seed)
    pseudo = FoldSplit(k=2, folds=[test_idx, train_idx], mode="holdout", seed=cfg.seed)
    return run_fold(net_config, cfg, manifest, data_root, pseudo, fold_index=0)
