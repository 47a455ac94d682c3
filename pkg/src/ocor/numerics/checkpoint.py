"""Binary checkpoint container.

Layout::

    b"OCORCKPT"            8-byte magic
    <u4 version>
    <u4 header length>     little-endian
    header                 UTF-8 JSON (sorted keys): config, config_hash,
                           step, extra, tensors=[{name, shape, offset}]
    payload                every tensor as float32 little-endian, row-major,
                           concatenated in header order
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"OCORCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_hash(config: Mapping[str, Any]) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(
    path: str | Path,
    params: Mapping[str, np.ndarray],
    config: Mapping[str, Any],
    step: int,
    extra: Mapping[str, Any] | None = None,
) -> None:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(params):
        arr = np.asarray(params[name], dtype="<f4", order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.size
    header = {
        "config": dict(config),
        "config_hash": config_hash(config),
        "step": int(step),
        "extra": dict(extra or {}),
        "tensors": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(head)))
        fh.write(head)
        for chunk in chunks:
            fh.write(chunk)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Return ``(arrays, header)``; arrays come back as float32."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, head_len = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + head_len].decode("utf-8"))
    payload = np.frombuffer(raw, dtype="<f4", offset=16 + head_len)
    if header.get("config_hash") != config_hash(header["config"]):
        raise CheckpointError(f"{path}: config hash mismatch")
    arrays = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        if start + count > payload.size:
            raise CheckpointError(f"{path}: truncated payload at {entry['name']!r}")
        arrays[entry["name"]] = payload[start : start + count].reshape(tuple(entry["shape"])).copy()
    return arrays, header
