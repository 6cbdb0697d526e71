"""Seeded, counter-based random streams with named sub-streams.

All randomness in the package flows through Philox generators keyed by a
64-bit seed plus an integer path, so any run can be reproduced bit-for-bit
from its seed and independent consumers never share a stream.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return a generator for the sub-stream identified by ``seed`` and ``path``.

    Distinct paths under the same seed yield statistically independent,
    reproducible streams; the same (seed, path) always yields the same stream.
    """
    seq = np.random.SeedSequence(seed, spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *path: int) -> int:
    """Collapse (seed, path) into a single 64-bit seed for APIs that take one."""
    seq = np.random.SeedSequence(seed, spawn_key=tuple(int(p) for p in path))
    return int(seq.generate_state(1, np.uint64)[0])
