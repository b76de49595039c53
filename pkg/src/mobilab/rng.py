"""Named, seeded random substreams.

Every stochastic operation draws from its own stream derived from the run
seed and a stable stream name, so any sub-result can be reproduced without
replaying the others.
"""

from __future__ import annotations

import zlib

import numpy as np

# Simulation draws are generated in fixed-size person blocks. Each block owns a
# substream, which makes serial and parallel generation bit-identical.
BLOCK_SIZE = 4096


def _stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Return a generator for stream ``name`` (and optional integer sub-keys).

    Parameters
    ----------
    seed : int
        Run seed (any non-negative 64-bit integer).
    name : str
        Stream name, e.g. ``"simulation"``, ``"splitting"``, ``"folds"``.
    *keys : int
        Further integer keys, e.g. a block or repetition index.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    entropy = [seed & 0xFFFFFFFF, seed >> 32, _stream_key(name), *[int(k) for k in keys]]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def block_slices(n: int, block_size: int = BLOCK_SIZE):
    """Yield ``(block_index, slice)`` pairs covering ``range(n)``."""
    for b, start in enumerate(range(0, n, block_size)):
        yield b, slice(start, min(start + block_size, n))
