"""Seed derivation shared by every stochastic routine."""
from __future__ import annotations

import numpy as np


def derive_seed(*keys: int) -> int:
    """Return a 63-bit seed that depends deterministically on ``keys``.

    Keys are hashed through :class:`numpy.random.SeedSequence`, so nearby
    master seeds do not produce correlated streams.
    """
    words = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return int((int(words[0]) << 31) ^ int(words[1]))
