"""Named sub-seeds derived from one run-level seed."""
from __future__ import annotations

import zlib

import numpy as np


def derive_seed(base: int, *names) -> int:
    """Deterministic 63-bit seed for the component path ``names`` under ``base``."""
    words = [int(base) & 0xFFFFFFFF]
    for name in names:
        words.append(zlib.crc32(str(name).encode("utf-8")))
    return int(np.random.SeedSequence(words).generate_state(2, dtype=np.uint32).astype(np.uint64)
               .dot(np.array([1 << 32, 1], dtype=np.uint64)) >> np.uint64(1))
