"""Deterministic random substreams for parallel Monte Carlo.

Every stochastic component in this package draws from a generator addressed
by an integer path ``(seed, i, j, ...)``.  Two distinct paths yield
statistically independent streams, and the stream attached to a path never
depends on scheduling, worker count, or evaluation order.
"""

from __future__ import annotations

import numpy as np

# Path element reserved for one-shot replicate retries; large enough to never
# collide with a replicate or second-stage index.
RETRY_TAG = 2**63 - 1


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return the generator addressed by ``(seed, *path)``.

    Elements must be non-negative integers; SeedSequence enforces this.
    Equivalent to ``default_rng(SeedSequence(...))`` (PCG64 streams).
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, *path))))


def child_seed(seed: int, *path: int) -> int:
    """Derive a 64-bit seed for a nested component with its own seed field."""
    ss = np.random.SeedSequence((seed, *path))
    hi, lo = ss.generate_state(2)
    return (int(hi) << 32) | int(lo)
