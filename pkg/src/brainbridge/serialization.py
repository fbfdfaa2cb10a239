"""Single-file tensor container used for checkpoints and trainer state.

Layout (all integers little-endian):

    bytes 0..4    magic b"BBC1"
    bytes 4..8    uint32 header length N
    bytes 8..8+N  UTF-8 JSON header:
                    {"meta": {...},                   # caller-owned JSON block
                     "tensors": [{"name", "shape", "dtype", "nbytes"}, ...],
                     "payload_sha256": "<hex>"}
    rest          tensor payloads, concatenated in header order,
                  raw little-endian bytes

The sha256 covers the payload, so truncation or bit corruption is caught
at load time. Writing is atomic (temp file + rename). Round-trips are
bit-exact: arrays are stored verbatim.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"BBC1"

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4", "uint8": "|u1", "bool": "|b1"}


def write_container(path: str | Path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write `meta` plus named arrays to `path` atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    entries = []
    chunks = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        key = str(arr.dtype)
        if key not in _DTYPES:
            raise CheckpointError(f"unsupported tensor dtype {key} for blob {name!r}")
        data = arr.astype(_DTYPES[key], copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": key, "nbytes": len(data)})
        chunks.append(data)

    payload = b"".join(chunks)
    header = {
        "meta": meta,
        "tensors": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(4, "little"))
        fh.write(header_bytes)
        fh.write(payload)
    os.replace(tmp, path)


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Load a container; returns (meta, {name: array}). Verifies the checksum."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a brainbridge container (bad magic)")
    header_len = int.from_bytes(raw[4:8], "little")
    if len(raw) < 8 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc

    payload = raw[8 + header_len :]
    expected = sum(e["nbytes"] for e in header["tensors"])
    if len(payload) != expected:
        raise CheckpointError(f"{path}: payload length {len(payload)} != expected {expected} (truncated?)")
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt payload)")

    tensors = {}
    offset = 0
    for entry in header["tensors"]:
        n = entry["nbytes"]
        arr = np.frombuffer(payload[offset : offset + n], dtype=_DTYPES[entry["dtype"]])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(entry["dtype"], copy=False)
        offset += n
    return header["meta"], tensors
