"""Self-describing binary checkpoint container.

Layout: magic, format version, a length-prefixed JSON header (model config,
vocabulary mode, id table, tensor index with shapes/dtypes/offsets), the raw
row-major tensor bytes, and a trailing SHA-256 of everything before it.
Reload is bit-exact; a checksum mismatch is a data error.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import ModelConfig, Params

MAGIC = b"PFCK"
VERSION = 1


def save_checkpoint(
    path: str | Path,
    params: Params,
    config: ModelConfig,
    vocab_mode: str,
    id_table: list[str],
    extra: dict | None = None,
) -> None:
    names = sorted(params)
    index = []
    offset = 0
    for name in names:
        a = params[name]
        index.append(
            {"name": name, "shape": list(a.shape), "dtype": str(a.dtype), "offset": offset}
        )
        offset += a.nbytes
    header = {
        "config": config.as_dict(),
        "vocab_mode": vocab_mode,
        "id_table": id_table,
        "tensors": index,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(header_bytes))
    blob += header_bytes
    for name in names:
        blob += np.ascontiguousarray(params[name]).tobytes()
    digest = hashlib.sha256(bytes(blob)).digest()
    Path(path).write_bytes(bytes(blob) + digest)


def load_checkpoint(path: str | Path) -> tuple[Params, ModelConfig, dict]:
    """Returns (params, config, header). Header keys include vocab_mode,
    id_table and extra."""
    raw = Path(path).read_bytes()
    if len(raw) < 44 or raw[:4] != MAGIC:
        raise DataError(f"{path} is not a patchforge checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise DataError(f"{path}: checksum mismatch, checkpoint is corrupt")
    version, header_len = struct.unpack("<II", body[4:12])
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(body[12 : 12 + header_len].decode("utf-8"))
    tensor_bytes = body[12 + header_len :]
    params: Params = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * dtype.itemsize
        params[entry["name"]] = (
            np.frombuffer(tensor_bytes[start:end], dtype=dtype).reshape(shape).copy()
        )
    config = ModelConfig(**header["config"])
    return params, config, header
