"""Synthetic phantom images standing in for clinical scans, plus PGM I/O.

Each phantom is a smooth low-frequency background with Gaussian noise.
Tumor-free images carry nothing else; "primary" images get one large
bright ellipse (single origin lesion) and "secondary" images get 2-4 small
bright ellipses (metastatic pattern). Generation is a pure function of
(config, seed): every image draws from its own generator keyed by
(seed, class, index), so byte-identical reruns are guaranteed.
"""

from __future__ import annotations

import os

import numpy as np

from . import kernels
from .data import SampleRecord, write_manifest
from .errors import DataError

CLASS_ORDER = ("none", "primary", "secondary")
PATIENT_BLOCK = 5  # consecutive images sharing one synthetic patient id
LESION_BRIGHTNESS = 0.45
BACKGROUND_LEVEL = 0.42


def write_pgm(path, image: np.ndarray) -> None:
    """Write a (H, W) uint8 array as binary PGM (P5)."""
    if image.ndim != 2 or image.dtype != np.uint8:
        raise DataError(f"PGM writer needs a 2-D uint8 array, got {image.dtype} {image.shape}")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5) file into a (H, W) uint8 array."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None
    if not blob.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM (P5) file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError:
        raise DataError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise DataError(f"{path}: unsupported PGM maxval {maxval}")
    pos += 1  # single whitespace after maxval
    data = blob[pos:pos + w * h]
    if len(data) != w * h:
        raise DataError(f"{path}: truncated PGM payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def load_image(path) -> np.ndarray:
    """Read a PGM into a float (1, H, W) array in [0, 1]."""
    return read_pgm(path)[None].astype(np.float64) / 255.0


def _ellipse_mask(size: int, cy, cx, ay, ax, angle) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    ca, sa = np.cos(angle), np.sin(angle)
    u = (dx * ca + dy * sa) / ax
    v = (-dx * sa + dy * ca) / ay
    d = np.sqrt(u * u + v * v)
    # unit intensity inside, soft rim just outside the nominal boundary
    return np.clip((1.1 - d) / 0.25, 0.0, 1.0)


def _render(cls: str, size: int, rng: np.random.Generator) -> np.ndarray:
    coarse = rng.uniform(-1.0, 1.0, size=(1, 1, 5, 5))
    field = kernels.bilinear_resize(coarse, size, size)[0, 0]
    field -= field.mean()
    img = BACKGROUND_LEVEL + 0.10 * field + rng.normal(0.0, 0.03, size=(size, size))
    if cls == "primary":
        cy, cx = rng.uniform(0.30 * size, 0.70 * size, size=2)
        ay, ax = rng.uniform(0.16 * size, 0.24 * size, size=2)
        img += LESION_BRIGHTNESS * _ellipse_mask(size, cy, cx, ay, ax, rng.uniform(0, np.pi))
    elif cls == "secondary":
        for _ in range(int(rng.integers(2, 5))):
            cy, cx = rng.uniform(0.18 * size, 0.82 * size, size=2)
            ay, ax = rng.uniform(0.05 * size, 0.10 * size, size=2)
            img += LESION_BRIGHTNESS * _ellipse_mask(size, cy, cx, ay, ax, rng.uniform(0, np.pi))
    elif cls != "none":
        raise DataError(f"unknown phantom class {cls!r}")
    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def generate_phantoms(out_dir, counts: dict, size: int = 64, seed: int = 0):
    """Write phantom PGMs plus manifest.csv into `out_dir`; returns the records.

    `counts` maps class name ("none", "primary", "secondary") to the number
    of images. Patient ids are assigned in blocks of PATIENT_BLOCK images so
    patient-grouped splits are possible.
    """
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for cls_index, cls in enumerate(CLASS_ORDER):
        n = int(counts.get(cls, 0))
        if n < 0:
            raise DataError(f"negative count for class {cls!r}")
        for i in range(n):
            rng = np.random.default_rng([seed, cls_index, i])
            name = f"{cls}_{i:04d}.pgm"
            write_pgm(os.path.join(out_dir, name), _render(cls, size, rng))
            records.append(SampleRecord(
                image_path=name,
                patient_id=f"{cls}-p{i // PATIENT_BLOCK:03d}",
                tumor_present=0 if cls == "none" else 1,
                source_type="none" if cls == "none" else cls,
                class_name=cls,
            ))
    write_manifest(os.path.join(out_dir, "manifest.csv"), records)
    return records
