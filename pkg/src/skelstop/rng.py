"""Deterministic random substreams derived from one master seed."""
from __future__ import annotations

import hashlib

import numpy as np

BLOCK_SIZE = 1024


def _tag_word(tag: str) -> int:
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Generator for the substream keyed by ``(seed, tag, index)``.

    Distinct keys give statistically independent streams; the same key
    always reproduces the same stream regardless of which thread asks.
    """
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    if index < 0:
        raise ValueError("substream index must be nonnegative")
    seq = np.random.SeedSequence([int(seed), _tag_word(tag), int(index)])
    return np.random.Generator(np.random.PCG64(seq))


def block_ranges(n_items: int, block: int = BLOCK_SIZE) -> list[tuple[int, int, int]]:
    """Split ``range(n_items)`` into ``(block_index, start, stop)`` triples."""
    return [(b, s, min(s + block, n_items)) for b, s in enumerate(range(0, n_items, block))]
