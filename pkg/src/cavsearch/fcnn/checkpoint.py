"""Binary checkpoint serialization.

File layout::

    bytes 0..7    magic b"FCNNCKP1"
    bytes 8..11   header length L, unsigned 32-bit little-endian
    bytes 12..12+L-1   UTF-8 JSON header
    remainder     raw little-endian float32 parameter payload

Header schema::

    {"config": {"depth": ..., "base_channels": ..., "kernel_size": ...},
     "params": [{"name": ..., "shape": [...], "offset": ...}, ...],
     "meta": {"epoch": ..., "best_val_loss": ..., "seed": ...}}

``offset`` is the parameter's byte offset from the start of the payload.
Parameters appear in network storage order and tile the payload exactly.
Every structural violation raises :class:`CheckpointFormatError` carrying
the byte offset where the problem was detected.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CheckpointFormatError
from .network import NetworkConfig, param_shapes

MAGIC = b"FCNNCKP1"


@dataclass
class Checkpoint:
    config: NetworkConfig
    params: dict[str, np.ndarray]
    epoch: int
    best_val_loss: float | None
    seed: int


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> None:
    entries = []
    chunks = []
    offset = 0
    for name, arr in checkpoint.params.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "config": {"depth": checkpoint.config.depth,
                   "base_channels": checkpoint.config.base_channels,
                   "kernel_size": checkpoint.config.kernel_size},
        "params": entries,
        "meta": {"epoch": checkpoint.epoch,
                 "best_val_loss": checkpoint.best_val_loss,
                 "seed": checkpoint.seed},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)


def _require(header: dict, key: str, offset: int):
    if key not in header:
        raise CheckpointFormatError(f"header is missing {key!r}", offset)
    return header[key]


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointFormatError(
            f"bad magic {data[:8]!r}, expected {MAGIC!r}", 0)
    if len(data) < 12:
        raise CheckpointFormatError("file truncated before header length", 8)
    (length,) = struct.unpack("<I", data[8:12])
    if len(data) < 12 + length:
        raise CheckpointFormatError(
            f"header claims {length} bytes but file ends early", 12)
    try:
        header = json.loads(data[12:12 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"header is not valid JSON: {exc}",
                                    12) from exc
    if not isinstance(header, dict):
        raise CheckpointFormatError("header must be a JSON object", 12)

    cfg_dict = _require(header, "config", 12)
    try:
        config = NetworkConfig(depth=cfg_dict["depth"],
                               base_channels=cfg_dict["base_channels"],
                               kernel_size=cfg_dict["kernel_size"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"invalid network config: {exc}",
                                    12) from exc
    meta = _require(header, "meta", 12)
    entries = _require(header, "params", 12)

    expected = param_shapes(config)
    if [e.get("name") for e in entries] != list(expected):
        raise CheckpointFormatError(
            "parameter list does not match architecture "
            f"(depth={config.depth}, base_channels={config.base_channels}, "
            f"kernel_size={config.kernel_size})", 12)

    payload_start = 12 + length
    payload_size = len(data) - payload_start
    params: dict[str, np.ndarray] = {}
    offset = 0
    for entry in entries:
        name = entry["name"]
        shape = tuple(entry.get("shape", ()))
        if shape != expected[name]:
            raise CheckpointFormatError(
                f"parameter {name} has shape {shape}, expected "
                f"{expected[name]}", 12)
        if entry.get("offset") != offset:
            raise CheckpointFormatError(
                f"parameter {name} at offset {entry.get('offset')}, "
                f"expected {offset} (parameters must tile the payload)",
                payload_start + offset)
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > payload_size:
            raise CheckpointFormatError(
                f"payload truncated inside parameter {name}",
                payload_start + payload_size)
        flat = np.frombuffer(
            data, dtype="<f4", count=nbytes // 4,
            offset=payload_start + offset)
        params[name] = flat.reshape(shape).astype(np.float32)
        offset += nbytes
    if offset != payload_size:
        raise CheckpointFormatError(
            f"{payload_size - offset} trailing bytes after last parameter",
            payload_start + offset)

    try:
        epoch = int(meta["epoch"])
        seed = int(meta["seed"])
        raw_loss = meta["best_val_loss"]
        best_val_loss = None if raw_loss is None else float(raw_loss)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"invalid meta block: {exc}",
                                    12) from exc
    return Checkpoint(config=config, params=params, epoch=epoch,
                      best_val_loss=best_val_loss, seed=seed)
