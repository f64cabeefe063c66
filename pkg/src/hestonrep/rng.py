"""Deterministic random-stream derivation for parallel Monte Carlo.

Streams are built on the counter-based Philox generator keyed through a
``SeedSequence`` over ``(seed, *tags)``.  A path's stream depends only on the
master seed and its identifying integers, never on scheduling or on how many
other streams were drawn first, so per-path traces are bit-reproducible and
bulk chunked simulation is reproducible for a fixed chunk policy.
"""

from __future__ import annotations

import numpy as np

# Tag namespaces keep unrelated consumers of the same master seed independent.
PATH_TAG = 0x50415448  # per-path streams ("PATH")
CHUNK_TAG = 0x43484E4B  # per-chunk bulk streams ("CHNK")
DIAG_TAG = 0x44494147  # diagnostics suite ("DIAG")


def substream(seed: int, *tags: int) -> np.random.Generator:
    """Return an independent generator keyed by (seed, tags)."""
    ss = np.random.SeedSequence(entropy=[int(seed), *(int(t) for t in tags)])
    return np.random.Generator(np.random.Philox(ss))


def path_stream(seed: int, path_index: int) -> np.random.Generator:
    """Dedicated stream for one simulated path."""
    return substream(seed, PATH_TAG, path_index)


def chunk_stream(seed: int, chunk_start: int, tag: int = 0) -> np.random.Generator:
    """Stream for a contiguous chunk of paths starting at ``chunk_start``."""
    return substream(seed, CHUNK_TAG, tag, chunk_start)
