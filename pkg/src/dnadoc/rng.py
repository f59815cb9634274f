"""Deterministic, splittable random streams.

Every stochastic choice in dataset generation draws from a generator keyed
by (seed, *path), e.g. (seed, sample_index, purpose). A worker that builds
sample i therefore reproduces exactly what a serial run would have
produced, regardless of how samples are partitioned across processes.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for one (seed, *path) slot."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(path)))
