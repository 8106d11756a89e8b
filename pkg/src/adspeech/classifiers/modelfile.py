"""Binary model container.

Layout::

    b"ADSPKMDL1"
    uint64 LE  length of the JSON metadata block
    JSON metadata (UTF-8)
    uint64 LE  number of float64 values in the parameter blob
    float64 LE parameter blob

The metadata lists every parameter array with its shape and dtype in blob
order; integer arrays are stored as exact float64 values.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..tables import atomic_write_bytes

MAGIC = b"ADSPKMDL1"
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def pack(metadata: dict, arrays: dict[str, np.ndarray]) -> bytes:
    manifest = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind in "iub" and arr.size and np.max(np.abs(arr.astype(np.float64))) >= 2**53:
            raise ModelFileError(f"integer array {name!r} not exactly representable as float64")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str})
        blobs.append(arr.astype("<f8").ravel())
    meta = dict(_jsonable(metadata))
    meta["format_version"] = FORMAT_VERSION
    meta["params"] = manifest
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    blob = np.concatenate(blobs) if blobs else np.zeros(0, dtype="<f8")
    return b"".join([MAGIC, struct.pack("<Q", len(header)), header, struct.pack("<Q", blob.size), blob.tobytes()])


def unpack(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if not data.startswith(MAGIC):
        raise ModelFileError("not a model file (bad magic bytes)")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise ModelFileError("truncated model file header")
    (json_len,) = struct.unpack("<Q", data[pos:pos + 8])
    pos += 8
    try:
        meta = json.loads(data[pos:pos + json_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"corrupt metadata block: {exc}") from None
    pos += json_len
    (count,) = struct.unpack("<Q", data[pos:pos + 8])
    pos += 8
    if len(data) - pos != 8 * count:
        raise ModelFileError(f"parameter blob declares {count} values but holds {(len(data) - pos) / 8:g}")
    blob = np.frombuffer(data[pos:], dtype="<f8")
    arrays = {}
    offset = 0
    for entry in meta.get("params", []):
        size = int(np.prod(entry["shape"], dtype=np.int64))
        arr = blob[offset:offset + size].reshape(entry["shape"]).astype(np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr
        offset += size
    if offset != count:
        raise ModelFileError("parameter manifest does not cover the blob")
    return meta, arrays


def write(path, metadata: dict, arrays: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, pack(metadata, arrays))


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise ModelFileError(f"{path}: no such model file")
    return unpack(path.read_bytes())
