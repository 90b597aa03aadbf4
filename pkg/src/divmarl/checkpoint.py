"""Versioned binary checkpoints with a JSON sidecar.

Layout: magic, format version, length-prefixed header JSON, then the raw
little-endian parameter arrays concatenated in the order declared by the
header's segment table.  The sidecar echoes the header so architectures
can be inspected without parsing binary.  Serialization is canonical
(sorted keys, fixed separators), so equal run seeds give byte-identical
files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"DVML"
FORMAT_VERSION = 1


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, meta: dict, segments: list) -> Path:
    """Write a checkpoint; `segments` is an ordered list of (name, array)."""
    path = Path(path)
    table = []
    blobs = []
    offset = 0
    for name, arr in segments:
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        table.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    header = dict(meta)
    header["format_version"] = FORMAT_VERSION
    header["segments"] = table
    header_bytes = _canonical_json(header)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)
    sidecar = path.with_suffix(".json")
    with open(sidecar, "w") as f:
        json.dump(header, f, sort_keys=True, indent=2)
        f.write("\n")
    return path


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read a checkpoint; returns (meta, {segment name: array})."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    version, header_len = struct.unpack("<IQ", raw[4:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header in {path}") from e
    body = raw[16 + header_len:]
    arrays = {}
    for seg in header["segments"]:
        start, n = seg["offset"], seg["nbytes"]
        if start + n > len(body):
            raise CheckpointError(f"truncated checkpoint body in {path}")
        arr = np.frombuffer(body[start:start + n], dtype=np.dtype(seg["dtype"]))
        arrays[seg["name"]] = arr.reshape(seg["shape"]).copy()
    meta = {k: v for k, v in header.items() if k != "segments"}
    return meta, arrays
