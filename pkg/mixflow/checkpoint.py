"""
mixflow.checkpoint

Binary checkpoint codec for SacParams.

Layout (little-endian):
    b"MXFW" | u16 version | u16 layer count
    per layer: u32 rows | u32 cols
    per layer: rows*cols float32 weights (row-major), cols float32 biases
    float32 log-temperature

Layers are listed actor first, then critic1, critic2, target1, target2.

Usage:
    from mixflow.checkpoint import save_checkpoint, load_checkpoint
    save_checkpoint('ckpt/update_010000.mxfw', agent.params)
    params = load_checkpoint('ckpt/update_010000.mxfw')
"""
import logging
import os
import struct
from typing import List

import numpy as np

from mixflow.errors import CheckpointFormatError, UnsupportedVersionError
from mixflow.sac import MLP, SacParams

logger = logging.getLogger(__name__)

MAGIC = b"MXFW"
VERSION = 1
NETWORKS = 5
_HEADER = struct.Struct("<4sHH")
_SHAPE = struct.Struct("<II")
_F32 = np.dtype("<f4")


def encode_checkpoint(params: SacParams) -> bytes:
    layers = [(w, b) for net in params.networks() for w, b in zip(net.weights, net.biases)]
    parts = [_HEADER.pack(MAGIC, VERSION, len(layers))]
    parts.extend(_SHAPE.pack(*w.shape) for w, _ in layers)
    for w, b in layers:
        parts.append(np.ascontiguousarray(w, dtype=_F32).tobytes())
        parts.append(np.ascontiguousarray(b, dtype=_F32).tobytes())
    parts.append(np.array([params.log_alpha], dtype=_F32).tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> SacParams:
    if len(data) < _HEADER.size:
        raise CheckpointFormatError("Checkpoint is shorter than its header")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointFormatError(f"Bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(version, f"Checkpoint version {version} is not supported")
    if count == 0 or count % NETWORKS:
        raise CheckpointFormatError(f"Layer count {count} does not split into {NETWORKS} networks")
    pos = _HEADER.size
    shapes = []
    try:
        for _ in range(count):
            shapes.append(_SHAPE.unpack_from(data, pos))
            pos += _SHAPE.size
    except struct.error:
        raise CheckpointFormatError("Truncated layer table")

    def take(n: int) -> np.ndarray:
        nonlocal pos
        end = pos + n * _F32.itemsize
        if end > len(data):
            raise CheckpointFormatError("Truncated weight data")
        arr = np.frombuffer(data, dtype=_F32, count=n, offset=pos).astype(np.float64)
        pos = end
        return arr

    weights: List[np.ndarray] = []
    biases: List[np.ndarray] = []
    for rows, cols in shapes:
        weights.append(take(rows * cols).reshape(rows, cols))
        biases.append(take(cols))
    log_alpha = float(take(1)[0])
    if pos != len(data):
        raise CheckpointFormatError(f"{len(data) - pos} trailing bytes")

    depth = count // NETWORKS
    nets = [MLP(weights[i:i + depth], biases[i:i + depth]) for i in range(0, count, depth)]
    if nets[0].sizes[-1] != 2 or any(n.sizes[-1] != 1 for n in nets[1:]):
        raise CheckpointFormatError("Unexpected network output sizes")
    return SacParams(*nets, log_alpha=log_alpha)


def save_checkpoint(path: str, params: SacParams) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_checkpoint(params))
    logger.info(f"[TRAIN] Checkpoint written to {path}")


def load_checkpoint(path: str) -> SacParams:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())
