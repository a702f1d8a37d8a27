"""Deterministic counter-based random streams.

Every stochastic component draws from a stream keyed by a tuple such as
(seed, "restart", 3) or (seed, sample_index, timestep). Streams are
independent Philox generators keyed by a hash of the tuple, so parallel or
reordered execution cannot change what any consumer draws.
"""

import hashlib

import numpy as np


def _canonical(part):
    if isinstance(part, (int, np.integer)):
        return "i%d" % int(part)
    if isinstance(part, str):
        return "s" + part
    raise TypeError(f"stream key parts must be int or str, got {type(part)!r}")


def stream(*parts) -> np.random.Generator:
    """Generator for the stream named by `parts` (ints and strings)."""
    tag = "\x1f".join(_canonical(p) for p in parts)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(*parts) -> int:
    """A 63-bit integer seed derived from the stream name; for subkeys."""
    tag = "\x1f".join(_canonical(p) for p in parts)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1
