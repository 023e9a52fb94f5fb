"""
Binary checkpoint format.

    8 bytes   magic  b"FPUNROLL"
    u32 LE    format version
    u32 LE    header length in bytes
    header    UTF-8 JSON: model config, step, parameter names and shapes
    payload   little-endian float64 parameters in declaration order

The header is written with sorted keys so identical models give identical
bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .model import ModelConfig, UnrollModel

MAGIC = b"FPUNROLL"
VERSION = 1


def dumps(model: UnrollModel, step: int = 0) -> bytes:
    header = {
        "config": model.config.to_dict(),
        "step": int(step),
        "params": [[name, list(arr.shape)] for name, arr in model.params.items()],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(hbytes)), hbytes]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in model.params.values()]
    return b"".join(parts)


def loads(data: bytes) -> tuple[UnrollModel, int]:
    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        header = json.loads(data[16 : 16 + hlen].decode())
        config = ModelConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    offset = 16 + hlen
    params = {}
    for name, shape in header["params"]:
        n = int(np.prod(shape)) if shape else 1
        chunk = data[offset : offset + 8 * n]
        if len(chunk) != 8 * n:
            raise CheckpointError("truncated checkpoint payload")
        params[name] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
        offset += 8 * n
    if offset != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    try:
        model = UnrollModel(config, params)
    except ValueError as exc:
        raise CheckpointError(f"checkpoint does not match its config: {exc}") from None
    return model, int(header.get("step", 0))


def save(path, model: UnrollModel, step: int = 0) -> None:
    Path(path).write_bytes(dumps(model, step))


def load(path) -> tuple[UnrollModel, int]:
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint not found: {p}")
    return loads(p.read_bytes())
