"""Versioned binary checkpoint of named float64 tensors.

Layout (all integers little-endian)::

    b"SHSDCKPT"                 8-byte magic
    u32 version                 currently 1
    u32 meta_len, meta          UTF-8 JSON, keys sorted
    u32 count
    count x:
        u16 name_len, name      UTF-8
        u8  ndim, u64[ndim]     shape
        f64[prod(shape)]        row-major values

The bytes depend only on the tensors and metadata, so the SHA-256 of the file
identifies a training outcome.
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Dict, Mapping, Tuple

import numpy as np

from .errors import ParseError

MAGIC = b"SHSDCKPT"
VERSION = 1


def dumps(params: Mapping[str, np.ndarray], meta: Mapping | None = None) -> bytes:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(params))]
    for name in params:
        # asarray keeps 0-d tensors 0-d, unlike ascontiguousarray
        arr = np.asarray(params[name], dtype="<f8", order="C")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> Tuple[Dict[str, np.ndarray], dict]:
    try:
        return _loads(blob)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"corrupt checkpoint: {exc}") from None


def _loads(blob: bytes):
    if blob[:8] != MAGIC:
        raise ParseError("not a checkpoint (bad magic)")
    version, meta_len = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    off = 16
    meta = json.loads(blob[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    params: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", blob, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        if off + 8 * size > len(blob):
            raise ParseError(f"truncated tensor {name!r}")
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape)
        params[name] = arr.astype(np.float64)
        off += 8 * size
    if off != len(blob):
        raise ParseError("trailing bytes after last tensor")
    return params, meta


def save(path, params: Mapping[str, np.ndarray], meta: Mapping | None = None) -> str:
    """Write a checkpoint and return its SHA-256 hex digest."""
    blob = dumps(params, meta)
    with open(path, "wb") as fh:
        fh.write(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


def digest(params: Mapping[str, np.ndarray], meta: Mapping | None = None) -> str:
    return hashlib.sha256(dumps(params, meta)).hexdigest()
