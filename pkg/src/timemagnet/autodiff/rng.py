"""Counter-based random streams with explicit seed threading.

All randomness flows through :class:`numpy.random.Generator` objects backed by
Philox, derived from an integer path such as ``(seed, purpose, round, client)``.
Nothing reads numpy's global state.
"""

from __future__ import annotations

import zlib

import numpy as np

_PURPOSES: dict = {}


def _purpose_code(purpose) -> int:
    if isinstance(purpose, int):
        return purpose
    code = _PURPOSES.get(purpose)
    if code is None:
        code = _PURPOSES[purpose] = zlib.crc32(purpose.encode())
    return code


def stream(seed: int, *path) -> np.random.Generator:
    """Independent generator for the integer/str ``path`` under ``seed``."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_purpose_code(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def split(rng: np.random.Generator, n: int) -> list:
    """Spawn ``n`` child generators from ``rng``."""
    return rng.spawn(n)
