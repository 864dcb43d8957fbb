"""Named random substreams derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np


def _key(name: str | int) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name) & 0xFFFFFFFF
    return zlib.crc32(str(name).encode("utf-8"))


def substream(root_seed: int, *names: str | int) -> np.random.Generator:
    """Return a generator that depends only on ``root_seed`` and the name path.

    ``substream(7, "city")`` and ``substream(7, "training", 3)`` are independent
    and reproducible across processes.
    """
    entropy = [int(root_seed) & 0xFFFFFFFF] + [_key(n) for n in names]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def child_seed(root_seed: int, *names: str | int) -> int:
    """An integer seed for APIs that want ints rather than generators."""
    return int(substream(root_seed, *names).integers(0, 2**31 - 1))
