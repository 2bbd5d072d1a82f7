"""Named RNG substreams derived from a single root seed.

Every stochastic component draws from its own stream, named by purpose
(e.g. "sampler/artist/train" or "train/album/step42"). Streams are
independent of each other and of call order, which is what makes
checkpoint-resume bit-identical to an uninterrupted run.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root_seed: int, name: str) -> int:
    """Map (root seed, stream name) to a stable 64-bit seed."""
    digest = hashlib.sha256(f"{root_seed}/{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(root_seed: int, name: str) -> np.random.Generator:
    """A fresh Generator for the named substream."""
    return np.random.default_rng(derive_seed(root_seed, name))
