"""Checkpoint container.

Layout::

    b"PASSPILOT1\\n"
    uint64 little-endian header length
    JSON header (utf-8)
    concatenated little-endian float32 blocks, in header order

The header records each block's name and shape, the action-space hash, and
whatever architecture / hyperparameter metadata the caller supplies.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PASSPILOT1\n"


class CheckpointError(ValueError):
    pass


class ActionSpaceMismatch(CheckpointError):
    pass


def save(path: str | Path, blocks: dict[str, np.ndarray], header: dict) -> None:
    names = list(blocks)
    meta = dict(header)
    meta["blocks"] = [{"name": n, "shape": list(np.shape(blocks[n]))} for n in names]
    raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for n in names:
            fh.write(np.ascontiguousarray(blocks[n], dtype="<f4").tobytes())


def load(path: str | Path, expect_action_hash: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic")
    off = len(MAGIC)
    (n,) = struct.unpack_from("<Q", data, off)
    off += 8
    header = json.loads(data[off:off + n].decode("utf-8"))
    off += n
    if expect_action_hash is not None and header.get("action_space_hash") != expect_action_hash:
        raise ActionSpaceMismatch(
            f"checkpoint action space {header.get('action_space_hash')} != {expect_action_hash}")
    blocks = {}
    for spec in header.pop("blocks"):
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape)
        blocks[spec["name"]] = arr.astype(np.float32)
        off += 4 * count
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return blocks, header
