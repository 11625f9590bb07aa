"""Seeded random streams.

All randomness in the package flows from one user seed through named
substreams, so that initialization, shuffling and embedding fill-in can be
reproduced independently of each other.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

_STREAMS = {
    "init": 0,
    "shuffle": 1,
    "embedding-fill": 2,
    "synthetic": 3,
    "test": 4,
}


def substream(seed: int, name: str, *key: int) -> np.random.Generator:
    """Generator for the named substream of ``seed``; extra ints (epoch
    numbers and the like) derive further independent streams."""
    if name not in _STREAMS:
        raise ConfigError(f"unknown random substream {name!r}")
    if seed < 0 or any(k < 0 for k in key):
        raise ConfigError(f"seeds must be non-negative, got {seed} / {key}")
    return np.random.default_rng(np.random.SeedSequence([seed, _STREAMS[name], *key]))
