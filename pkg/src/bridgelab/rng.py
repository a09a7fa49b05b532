"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
``(seed, stream)``. Two streams with different ids never overlap and do not
depend on the order in which they are created, so parallel or reordered work
reproduces bit-for-bit.
"""

from __future__ import annotations

import numpy as np

# Fixed stream ids. Per-item streams (probe points, trajectories) are offset
# from a base so they cannot collide with the fixed ones.
TRAIN_DATA = 1
TEST_DATA = 2
MEAN_INIT = 3
MEAN_TRAIN = 4
BRIDGE_INIT = 5
BRIDGE_TRAIN = 6
EVAL_BINS = 7
W2_CHECK = 8
PROBE_BASE = 1_000
TRAJECTORY_BASE = 1_000_000

_MASK64 = (1 << 64) - 1


def stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Return an independent generator for ``(seed, stream_id)``."""
    if seed < 0 or stream_id < 0:
        raise ValueError("seed and stream id must be non-negative")
    key = np.array([seed & _MASK64, stream_id & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
