"""Named random substreams derived from a single root seed.

Every stage of an experiment (environment episodes, weight init, replay
sampling, ...) pulls its own generator via `substream`, so changing how one
stage consumes randomness never shifts the draws seen by another.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_entropy(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(root_seed: int, name: str) -> np.random.Generator:
    """Deterministic generator for (root_seed, name), stable across runs."""
    return np.random.default_rng(np.random.SeedSequence([root_seed, _name_entropy(name)]))
