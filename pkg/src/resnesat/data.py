"""Dataset manifest, preprocessing, and cross-validation splitting.

A manifest is a UTF-8 CSV with header
`image_path,patient_id,tumor_present,source_type,class_name`. The presence
task uses every record; the source task keeps only tumor-present records.
Labels are binary: tumor present (presence task) and primary origin
(source task) are the positive classes.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DataError
from .tensor import dtype

MANIFEST_HEADER = ["image_path", "patient_id", "tumor_present", "source_type", "class_name"]
SOURCE_TYPES = ("primary", "secondary", "none")
TASKS = ("presence", "source")


@dataclass
class SampleRecord:
    image_path: str
    patient_id: str
    tumor_present: int
    source_type: str
    class_name: str

    def validate(self) -> None:
        if self.tumor_present not in (0, 1):
            raise DataError(f"tumor_present must be 0 or 1, got {self.tumor_present!r}")
        if self.source_type not in SOURCE_TYPES:
            raise DataError(f"source_type must be one of {SOURCE_TYPES}, got {self.source_type!r}")
        if (self.source_type == "none") != (self.tumor_present == 0):
            raise DataError(
                f"source_type {self.source_type!r} inconsistent with "
                f"tumor_present={self.tumor_present}")


@dataclass
class DatasetManifest:
    records: list
    task: str

    def __len__(self) -> int:
        return len(self.records)

    @property
    def positive_name(self) -> str:
        return "tumor present" if self.task == "presence" else "primary"

    def labels(self) -> np.ndarray:
        """Binary labels: presence -> tumor_present; source -> primary=1."""
        if self.task == "presence":
            return np.array([r.tumor_present for r in self.records], dtype=np.int64)
        return np.array([1 if r.source_type == "primary" else 0 for r in self.records],
                        dtype=np.int64)

    def patient_ids(self) -> list:
        return [r.patient_id for r in self.records]


def load_manifest(csv_path, task: str) -> DatasetManifest:
    """Read and validate a manifest CSV, applying the task's record filter."""
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}; expected one of {TASKS}")
    records = []
    seen_paths = set()
    try:
        fh = open(csv_path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {csv_path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{csv_path}: empty file") from None
        if header != MANIFEST_HEADER:
            raise DataError(f"{csv_path}: bad header {header}, expected {MANIFEST_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise DataError(f"{csv_path}:{lineno}: expected {len(MANIFEST_HEADER)} fields, "
                                f"got {len(row)}")
            try:
                record = SampleRecord(row[0], row[1], int(row[2]), row[3], row[4])
                record.validate()
            except (ValueError, DataError) as exc:
                raise DataError(f"{csv_path}:{lineno}: {exc}") from None
            if record.image_path in seen_paths:
                raise DataError(f"{csv_path}:{lineno}: duplicate image path "
                                f"{record.image_path!r}")
            seen_paths.add(record.image_path)
            records.append(record)
    if not records:
        raise DataError(f"{csv_path}: manifest has no records")
    if task == "source":
        records = [r for r in records if r.tumor_present == 1]
        if not records:
            raise DataError(f"{csv_path}: no tumor-present records for the source task")
    return DatasetManifest(records=records, task=task)


def write_manifest(csv_path, records) -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for r in records:
            writer.writerow([r.image_path, r.patient_id, r.tumor_present,
                             r.source_type, r.class_name])


# ---------------------------------------------------------------------------
# preprocessing

@dataclass
class NormStats:
    """Per-channel z-score statistics plus where they came from."""

    mean: np.ndarray
    std: np.ndarray
    provenance: str


def compute_norm_stats(images: np.ndarray, provenance: str) -> NormStats:
    """Dataset-level per-channel mean/std over an (N, C, H, W) stack.

    Variance is floored at 1e-8; a channel at the floor triggers a warning.
    """
    mean = images.mean(axis=(0, 2, 3))
    var = images.var(axis=(0, 2, 3))
    floored = var < 1e-8
    if floored.any():
        warnings.warn(f"zero-variance channel(s) {np.nonzero(floored)[0].tolist()}; "
                      "normalizing with variance floor 1e-8")
    std = np.sqrt(np.maximum(var, 1e-8))
    return NormStats(mean=mean.astype(dtype()), std=std.astype(dtype()),
                     provenance=provenance)


def preprocess(image: np.ndarray, train: bool, rng, stats: NormStats,
               out_size: int, out_channels: int) -> np.ndarray:
    """Resize, random horizontal flip (train only), and z-score one image.

    `image` is (H, W) or (C, H, W) with values already in [0, 1]. Grayscale
    input is replicated across `out_channels`. The flip draw always comes
    from `rng` so a caller-supplied per-image generator keeps parallel and
    serial schedules identical.
    """
    if image.ndim == 2:
        image = image[None]
    if image.shape[0] == 1 and out_channels > 1:
        image = np.repeat(image, out_channels, axis=0)
    if image.shape[0] != out_channels:
        raise DataError(f"image has {image.shape[0]} channels, expected {out_channels}")
    x = image.astype(dtype())[None]
    if x.shape[2] != out_size or x.shape[3] != out_size:
        x = kernels.bilinear_resize(x, out_size, out_size)
    x = x[0]
    if train and rng.random() < 0.5:
        x = x[:, :, ::-1].copy()
    return (x - stats.mean.reshape(-1, 1, 1)) / stats.std.reshape(-1, 1, 1)


def flip_horizontal(image: np.ndarray) -> np.ndarray:
    """Mirror the width axis of a (C, H, W) image."""
    return image[:, :, ::-1].copy()


# ---------------------------------------------------------------------------
# folds

@dataclass
class FoldSplit:
    k: int
    folds: list = field(default_factory=list)
    mode: str = "image-stratified"
    seed: int = 0

    def test_indices(self, fold: int) -> list:
        return list(self.folds[fold])

    def train_indices(self, fold: int) -> list:
        out = []
        for i, members in enumerate(self.folds):
            if i != fold:
                out.extend(members)
        return sorted(out)

    def validate(self, n: int) -> None:
        seen = set()
        for members in self.folds:
            for idx in members:
                if idx in seen:
                    raise DataError(f"index {idx} appears in two folds")
                seen.add(idx)
        if seen != set(range(n)):
            raise DataError("folds do not cover the full index set")


SPLIT_MODES = ("image-stratified", "patient-grouped")


def make_folds(manifest: DatasetManifest, k: int, mode: str = "image-stratified",
               seed: int = 0) -> FoldSplit:
    """Partition manifest indices into k folds, deterministic per seed."""
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    n = len(manifest)
    if n < k:
        raise DataError(f"dataset of {n} samples cannot fill {k} folds")
    if mode not in SPLIT_MODES:
        raise DataError(f"unknown split mode {mode!r}; expected one of {SPLIT_MODES}")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]

    if mode == "image-stratified":
        labels = manifest.labels()
        offset = 0
        for cls in np.unique(labels):
            members = np.nonzero(labels == cls)[0]
            if len(members) < k:
                raise DataError(
                    f"class {cls} has {len(members)} samples, fewer than k={k} "
                    "(image-stratified mode)")
            members = rng.permutation(members)
            # deal members round-robin starting at a rotating offset so the
            # per-class remainder does not pile onto the first folds
            for pos, idx in enumerate(members):
                folds[(offset + pos) % k].append(int(idx))
            offset += len(members) % k
    else:
        groups: dict = {}
        for idx, pid in enumerate(manifest.patient_ids()):
            groups.setdefault(pid, []).append(idx)
        if len(groups) < k:
            raise DataError(f"{len(groups)} patients cannot fill {k} disjoint folds")
        order = list(groups)
        rng.shuffle(order)
        order.sort(key=lambda pid: -len(groups[pid]))
        sizes = [0] * k
        for pid in order:
            target = min(range(k), key=lambda i: (sizes[i], i))
            folds[target].extend(groups[pid])
            sizes[target] += len(groups[pid])

    split = FoldSplit(k=k, folds=[sorted(f) for f in folds], mode=mode, seed=seed)
    split.validate(n)
    return split


def holdout_split(manifest: DatasetManifest, fraction: float, seed: int = 0):
    """Single stratified train/test split; returns (train_indices, test_indices)."""
    if not 0 < fraction < 1:
        raise DataError(f"holdout fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    labels = manifest.labels()
    test = []
    for cls in np.unique(labels):
        members = rng.permutation(np.nonzero(labels == cls)[0])
        take = max(1, int(round(len(members) * fraction)))
        test.extend(int(i) for i in members[:take])
    test_set = set(test)
    train = [i for i in range(len(manifest)) if i not in test_set]
    return sorted(train), sorted(test)


def save_folds(split: FoldSplit, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"k": split.k, "mode": split.mode, "seed": split.seed,
                   "folds": split.folds}, fh, indent=1)
        fh.write("\n")


def load_folds(path) -> FoldSplit:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return FoldSplit(k=int(data["k"]), folds=[list(map(int, f)) for f in data["folds"]],
                         mode=data["mode"], seed=int(data.get("seed", 0)))
    except OSError as exc:
        raise DataError(f"cannot read fold file {path}: {exc}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed fold file: {exc}") from None
