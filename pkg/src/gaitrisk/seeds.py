"""Deterministic RNG substreams derived from a single root seed."""

from __future__ import annotations

import hashlib

import numpy as np


def _key_words(key) -> list[int]:
    if isinstance(key, (int, np.integer)):
        return [int(key) & 0xFFFFFFFF, (int(key) >> 32) & 0xFFFFFFFF]
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def substream(root_seed: int, *keys) -> np.random.Generator:
    """A generator for the named substream (e.g. "gen", "train", subject ids).

    The mapping is stable across processes and platforms, so parallel or
    out-of-order consumers draw identical values for identical keys.
    """
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        entropy.extend(_key_words(key))
    return np.random.default_rng(np.random.SeedSequence(entropy))
