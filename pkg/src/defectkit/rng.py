"""Deterministic randomness: every random decision flows through derive_rng.

A stream is addressed by (master_seed, path) where path is a tuple of
non-negative integers. Identical addresses yield bit-identical streams;
distinct addresses yield statistically independent streams. Per-item paths
are (stage id, item index) so worker count and scheduling order cannot
change pipeline outputs.
"""

from __future__ import annotations

import numpy as np

# Stage ids used as the first path element. Fixed; never renumber.
STAGE_EXTRACT = 1
STAGE_SYNTH = 2
STAGE_AUGMENT = 3
STAGE_STREAM = 4
STAGE_POOL_SHUFFLE = 5

DEFAULT_MASTER_SEED = 0


def derive_rng(master_seed: int, path: tuple[int, ...] | list[int] = ()) -> np.random.Generator:
    """Return the independent random stream addressed by (master_seed, path)."""
    if master_seed < 0:
        raise ValueError(f"master_seed must be non-negative, got {master_seed}")
    key = tuple(int(p) for p in path)
    if any(p < 0 for p in key):
        raise ValueError(f"seed path elements must be non-negative, got {key}")
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))
