"""Seeded random streams.

Every generator in the package comes from :func:`make_rng`, keyed by a user
seed plus an integer stream path. Philox is counter-based, so streams with
different paths never overlap and can be consumed concurrently.
"""

from __future__ import annotations

import numpy as np

# stream tags, kept distinct so that no two consumers share a path
STREAM_PHASE = 1
STREAM_HOMODYNE = 2
STREAM_TRIGGER_ANGLE = 3
STREAM_BOOTSTRAP = 4


def make_rng(seed: int | None, *stream: int) -> np.random.Generator:
    """Return a Philox generator for ``(seed, *stream)``.

    ``seed=None`` draws fresh OS entropy (non-reproducible).
    """
    if seed is None:
        return np.random.Generator(np.random.Philox())
    if seed < 0 or any(s < 0 for s in stream):
        raise ValueError("seed and stream indices must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))
