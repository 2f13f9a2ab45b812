"""Named, index-addressable random streams.

Every random draw in the package comes from a generator built here, keyed by
``(seed, stream name, *indices)``. Two calls with the same key give the same
stream regardless of call order, so replicates and restarts can run in any
order (or in parallel) and still reproduce bit-for-bit.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = (
    "nmf-run",
    "split",
    "bootstrap-replicate",
    "sim-dataset",
    "realization",
    "pool",
)


def _key(name: str, index: tuple[int, ...]) -> tuple[int, ...]:
    if name not in STREAMS:
        raise KeyError(f"unknown random stream {name!r}")
    out = [zlib.crc32(name.encode())]
    for i in index:
        i = int(i)
        if i < 0:
            raise ValueError("stream indices must be non-negative")
        out.append(i)
    return tuple(out)


def stream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Generator for the stream ``name`` at position ``index`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=_key(name, index))
    return np.random.default_rng(ss)


def derive_seed(seed: int, name: str, *index: int) -> int:
    """Integer seed for a child computation (e.g. one bootstrap replicate)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=_key(name, index))
    return int(ss.generate_state(1, dtype=np.uint32)[0])

