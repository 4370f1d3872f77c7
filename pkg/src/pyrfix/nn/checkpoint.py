"""Single-file checkpoint archive: JSON manifest + raw little-endian payload.

Layout: 8-byte magic, uint64 manifest length, manifest JSON, then the
tensors back to back (row-major).  The manifest records format_version,
the model config, a vocabulary hash, and a name/dtype/shape/offset table,
so loads are validated before any tensor is touched.
"""

from __future__ import annotations

import json
import struct
from collections.abc import Mapping

import numpy as np

MAGIC = b"PYRFIXCK"
FORMAT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8", "int32": "<i4", "int64": "<i8"}


class CheckpointError(RuntimeError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


def save_checkpoint(params: Mapping[str, np.ndarray], config, vocab_hash: str | None,
                    path, extra: Mapping | None = None) -> None:
    table = []
    payload = bytearray()
    for name, tensor in params.items():
        tensor = np.ascontiguousarray(tensor)
        dtype_name = tensor.dtype.name
        if dtype_name not in _DTYPES:
            raise ValueError(f"{name}: unsupported dtype {dtype_name}")
        raw = tensor.astype(_DTYPES[dtype_name], copy=False).tobytes()
        table.append({"name": name, "dtype": dtype_name,
                      "shape": list(tensor.shape),
                      "offset": len(payload), "nbytes": len(raw)})
        payload.extend(raw)
    config_dict = config.to_dict() if hasattr(config, "to_dict") else config
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config_dict,
        "vocab_hash": vocab_hash,
        "tensors": table,
        "extra": dict(extra) if extra else {},
    }
    blob = json.dumps(manifest, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path):
    """Returns (params dict, config dict | None, vocab_hash, extra dict)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 8 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointCorruptError(f"{path}: not a checkpoint file")
    (blob_len,) = struct.unpack_from("<Q", data, len(MAGIC))
    header_end = len(MAGIC) + 8 + blob_len
    if len(data) < header_end:
        raise CheckpointCorruptError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[len(MAGIC) + 8:header_end])
    except json.JSONDecodeError as exc:
        raise CheckpointCorruptError(f"{path}: bad manifest ({exc})") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, expected {FORMAT_VERSION}")
    payload = data[header_end:]
    params: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise CheckpointCorruptError(
                f"{path}: truncated payload for tensor {entry['name']}")
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        shape = tuple(entry["shape"])
        expected = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        if nbytes != expected:
            raise CheckpointCorruptError(
                f"{path}: tensor {entry['name']} size mismatch")
        arr = np.frombuffer(payload, dtype=dtype, count=expected // dtype.itemsize,
                            offset=start).reshape(shape)
        params[entry["name"]] = arr.astype(entry["dtype"])
    return params, manifest.get("config"), manifest.get("vocab_hash"), manifest.get("extra", {})
