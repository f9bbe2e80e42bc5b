"""Single-file checkpoint container.

Layout: an 8-byte little-endian unsigned header length, then a UTF-8
JSON header, then the raw little-endian float32 parameter payload.  The
header carries the model spec (so checkpoints are self-describing) and a
``tensors`` map of name -> {shape, offset, dtype}, with offsets measured
from the start of the payload.  Tensors are serialized in sorted name
order so identical parameters always produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

FORMAT_TAG = "datlab-checkpoint/1"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, params: dict[str, np.ndarray], spec_dict: dict | None = None,
                    meta: dict | None = None) -> None:
    names = sorted(params)
    tensors = {}
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        tensors[name] = {"shape": list(arr.shape), "offset": offset, "dtype": "f32"}
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = {"format": FORMAT_TAG, "tensors": tensors}
    if spec_dict is not None:
        header["spec"] = spec_dict
    if meta:
        header["meta"] = meta
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Return (header dict, {name: float32 ndarray})."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise CheckpointError(f"{path}: truncated container (no header length)")
    (hlen,) = struct.unpack("<Q", raw[:8])
    if 8 + hlen > len(raw):
        raise CheckpointError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt JSON header: {exc}") from exc
    if header.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path}: unknown container format {header.get('format')!r}")
    payload = raw[8 + hlen:]
    params = {}
    for name, info in header["tensors"].items():
        if info["dtype"] != "f32":
            raise CheckpointError(f"{path}: unsupported dtype {info['dtype']!r} for {name}")
        shape = tuple(info["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = info["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise CheckpointError(f"{path}: tensor {name} extends past end of payload")
        params[name] = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).copy()
    return header, params


def checkpoint_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
