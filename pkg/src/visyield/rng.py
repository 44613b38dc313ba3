"""Deterministic random-stream derivation.

Every stochastic routine takes an explicit numpy Generator.  Independent
substreams are derived from (seed, role tag, loop indices) so that results
never depend on thread count or on how work is batched.
"""
from __future__ import annotations

import numpy as np

# Role tags for substream derivation.  Fixed forever; never reuse a tag for
# a new call site or previously published results change under the same seed.
ONION = 1
PROPOSAL_DRAW = 2
CLUSTERING = 3
MC_DRAW = 4
DESIGN_EVAL = 5
ORACLE = 6


def substream(seed: int, *path: int) -> np.random.Generator:
    """Child generator for (seed, *path); identical on every call.

    Parameters
    ----------
    seed : int
        Non-negative run seed.
    *path : int
        Role tag followed by loop indices (iteration, batch, ...).
    """
    parts = (seed, *path)
    if any(int(p) < 0 for p in parts):
        raise ValueError(f"substream path must be non-negative, got {parts}")
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in parts]))
