"""Versioned binary checkpoints.

Layout: magic ``RGCK``, u32 version, u32 header length, UTF-8 JSON header
(config, parameter names and shapes, step, seed, frozen groups), then
little-endian f64 blocks for parameters, first moments and second moments in
header order, then a sha256 digest of everything before it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ChecksumError, IoError, MissingCheckpoint
from .model import ModelConfig, ModelState

MAGIC = b"RGCK"
VERSION = 1


def dumps(state: ModelState) -> bytes:
    names = list(state.params)
    header = {
        "config": {k: getattr(state.config, k) for k in state.config.__dataclass_fields__},
        "names": names,
        "shapes": [list(state.params[k].shape) for k in names],
        "step": state.step,
        "seed": state.seed,
        "frozen": sorted(state.frozen),
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(hdr)), hdr]
    for block in (state.params, state.m, state.v):
        for k in names:
            parts.append(np.ascontiguousarray(block[k], dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def loads(blob: bytes) -> ModelState:
    if len(blob) < 44 or blob[:4] != MAGIC:
        raise ChecksumError("not a relgraph checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checkpoint checksum mismatch")
    version, hlen = struct.unpack("<II", body[4:12])
    if version != VERSION:
        raise ChecksumError(f"unsupported checkpoint version {version}")
    header = json.loads(body[12 : 12 + hlen])
    off = 12 + hlen
    blocks = []
    for _ in range(3):
        block = {}
        for name, shape in zip(header["names"], header["shapes"]):
            n = int(np.prod(shape)) if shape else 1
            block[name] = np.frombuffer(body, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(shape)
            off += 8 * n
        blocks.append(block)
    if off != len(body):
        raise ChecksumError("checkpoint has trailing or missing bytes")
    return ModelState(
        ModelConfig(**header["config"]), blocks[0], blocks[1], blocks[2],
        header["step"], header["seed"], frozenset(header["frozen"]),
    )


def save_checkpoint(state: ModelState, path) -> Path:
    path = Path(path)
    try:
        path.write_bytes(dumps(state))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path) -> ModelState:
    path = Path(path)
    if not path.exists():
        raise MissingCheckpoint(f"checkpoint {path} not found")
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(blob)
