"""Binary checkpoint format, versioned and byte-exact.

Layout (all integers little-endian):

    magic   b"RSAT"
    u32     format version (currently 1)
    u32     training epoch
    u32     config block length, then that many UTF-8 bytes of key=value lines
    3 tensor sections in order: parameters, optimizer velocities, preprocessing
    each section: u32 record count, then records of
        u16 name length, name bytes (UTF-8),
        u8 axis count, u32 extents..., float32 data (row-major)

Tensors are stored as 32-bit floats regardless of the run's precision mode.
Spatial-attention tensors are strictly additive: loading a checkpoint that
lacks them into a network that has them leaves those at their initialized
values and is not an error.
"""

from __future__ import annotations

import struct
from io import BufferedReader

import numpy as np

from .errors import CheckpointError
from .network import Network, NetworkConfig, build_network
from .tensor import dtype

MAGIC = b"RSAT"
VERSION = 1


def _config_to_bytes(config: NetworkConfig) -> bytes:
    lines = [f"{k}={v}" for k, v in sorted(config.to_dict().items())]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _config_from_bytes(blob: bytes) -> NetworkConfig:
    data = {}
    for lineno, line in enumerate(blob.decode("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise CheckpointError(f"config block line {lineno} is not key=value: {line!r}")
        key, value = line.split("=", 1)
        data[key] = value
    try:
        return NetworkConfig.from_dict(data)
    except KeyError as exc:
        raise CheckpointError(f"config block missing key {exc}") from exc


def _write_tensor(fh, name: str, value: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", value.ndim))
    for extent in value.shape:
        fh.write(struct.pack("<I", extent))
    fh.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def _read_exact(fh: BufferedReader, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(data)}")
    return data


def _read_tensor(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, name_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
    shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").reshape(shape)
    return name, data


def save_checkpoint(network: Network, path, epoch: int = 0,
                    optimizer_state: dict | None = None,
                    preproc: dict | None = None) -> None:
    """Write the network (and optional optimizer/preprocessing state) to `path`."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", epoch))
        blob = _config_to_bytes(network.config)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)

        params = list(network.named_parameters())
        fh.write(struct.pack("<I", len(params)))
        for name, p in params:
            _write_tensor(fh, name, p.value)

        opt = optimizer_state or {}
        fh.write(struct.pack("<I", len(opt)))
        for name in sorted(opt):
            _write_tensor(fh, name, opt[name])

        pre = preproc or {}
        fh.write(struct.pack("<I", len(pre)))
        for name in sorted(pre):
            _write_tensor(fh, name, pre[name])


def load_checkpoint(path, config: NetworkConfig | None = None, seed: int = 0):
    """Load a checkpoint; returns (network, epoch, optimizer_state, preproc).

    When `config` is given the checkpoint tensors must match the
    architecture that config describes; otherwise the embedded config is
    used. Tensors are cast to the current precision mode.
    """
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    with fh:
        magic = _read_exact(fh, 4)
        if magic != MAGIC:
            raise CheckpointError(f"not a checkpoint file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
        (epoch,) = struct.unpack("<I", _read_exact(fh, 4))
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4))
        embedded = _config_from_bytes(_read_exact(fh, blob_len))
        target = config if config is not None else embedded

        network = build_network(target, seed=seed)
        wanted = dict(network.named_parameters())

        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        seen = set()
        for _ in range(count):
            name, value = _read_tensor(fh)
            if name not in wanted:
                raise CheckpointError(f"tensor {name!r} not present in the target architecture")
            p = wanted[name]
            if value.shape != p.value.shape:
                raise CheckpointError(
                    f"tensor {name!r}: checkpoint dims {value.shape} do not match "
                    f"architecture dims {p.value.shape}")
            p.value[:] = value.astype(dtype())
            seen.add(name)
        missing = [n for n in wanted if n not in seen and ".sa." not in n]
        if missing:
            raise CheckpointError(f"checkpoint is missing tensors: {missing[:4]}")

        (opt_count,) = struct.unpack("<I", _read_exact(fh, 4))
        optimizer_state = {}
        for _ in range(opt_count):
            name, value = _read_tensor(fh)
            optimizer_state[name] = value.astype(dtype())

        (pre_count,) = struct.unpack("<I", _read_exact(fh, 4))
        preproc = {}
        for _ in range(pre_count):
            name, value = _read_tensor(fh)
            preproc[name] = value.astype(dtype())

    return network, epoch, optimizer_state, preproc
