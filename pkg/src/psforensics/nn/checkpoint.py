"""Binary checkpoint format.

All integers little-endian::

    magic        8 bytes  b"PSFCKPT\\0"
    version      u32
    cfg digest   32 bytes (sha256 of the config bytes below)
    cfg length   u32, followed by that many bytes of UTF-8 JSON
    n params     u32
    per parameter:
        name length u16, name (UTF-8)
        rank u8, rank x u32 dims
        float32 payload, prod(dims) x 4 bytes
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

MAGIC = b"PSFCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def canonical_json(cfg: Dict) -> bytes:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")


def config_digest(cfg: Dict) -> bytes:
    return hashlib.sha256(canonical_json(cfg)).digest()


def save_checkpoint(path, state: Dict[str, np.ndarray], cfg: Dict) -> Path:
    path = Path(path)
    blob = canonical_json(cfg)
    parts = [MAGIC, struct.pack("<I", VERSION), hashlib.sha256(blob).digest(),
             struct.pack("<I", len(blob)), blob, struct.pack("<I", len(state))]
    for name, arr in state.items():
        encoded = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path.write_bytes(b"".join(parts))
    return path


def load_checkpoint(path, expected_cfg: Dict = None) -> Tuple[Dict, Dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(8)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    digest = bytes(take(32))
    (clen,) = struct.unpack("<I", take(4))
    blob = bytes(take(clen))
    if hashlib.sha256(blob).digest() != digest:
        raise CheckpointError(f"{path}: config digest mismatch (corrupt header)")
    cfg = json.loads(blob)
    if expected_cfg is not None and config_digest(expected_cfg) != digest:
        raise CheckpointError(f"{path}: checkpoint was written for a different model config")
    (count,) = struct.unpack("<I", take(4))
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
        state[name] = arr
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return cfg, state
