"""Shared binary checkpoint container.

Layout (all integers little-endian):

    magic  b"PDCK"
    u32    format version (currently 1)
    u32    metadata byte length, then UTF-8 "key=value\\n" lines
    repeated parameter records until EOF:
        u32      name byte length, then UTF-8 name
        u32      rank
        u64[rank] dims
        f64[prod(dims)] payload, little-endian row-major

Round trips are byte-exact: metadata keys are written sorted and parameter
order is preserved.
"""

import struct
from collections import OrderedDict

import numpy as np

from .errors import ContractError

MAGIC = b"PDCK"
VERSION = 1


def save_checkpoint(path, metadata, params):
    """Write `params` (name -> float64 ndarray, order preserved) with
    string metadata."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        lines = []
        for key in sorted(metadata):
            value = str(metadata[key])
            if "=" in key or "\n" in key or "\n" in value:
                raise ContractError(f"metadata key/value not line-safe: {key!r}")
            lines.append(f"{key}={value}\n")
        blob = "".join(lines).encode("utf-8")
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name, arr in params.items():
            arr = np.asarray(arr, dtype=np.float64)
            name_b = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<Q", dim))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (metadata dict, OrderedDict of params)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise ContractError(f"bad checkpoint magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", raw, 8)
    off = 12
    metadata = {}
    for line in raw[off:off + meta_len].decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        metadata[key] = value
    off += meta_len
    params = OrderedDict()
    while off < len(raw):
        (name_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from("<%dQ" % rank, raw, off)
        off += 8 * rank
        count = 1
        for dim in dims:
            count *= dim
        payload = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
        off += 8 * count
        params[name] = payload.astype(np.float64).reshape(dims)
    return metadata, params
