"""Counter-based random streams.

Every consumer of randomness gets its own Philox generator keyed by
(seed, stream id), so adding a new consumer never perturbs the draws seen
by existing ones and runs replay bit-identically from the seed alone.
"""

from __future__ import annotations

import numpy as np

# stream ids; arbitrary but fixed forever
STREAM_INIT = 1  # parameter initialisation
STREAM_DATA = 2  # dataset sampling
STREAM_NOISE = 3  # refinement noise draws
STREAM_EVAL = 4  # evaluation-time sampling
STREAM_CHECK = 5  # gradient-check probe data
STREAM_BATCH = 6  # minibatch index sampling


def stream(seed, stream_id):
    """Independent float64 Generator for (seed, stream_id)."""
    return np.random.Generator(np.random.Philox(key=[int(seed), int(stream_id)]))
