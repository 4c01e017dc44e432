"""Deterministic randomness used everywhere seeded behavior is promised.

All shuffles and samples in the pipeline run off SplitMix64, a 64-bit mixing
generator, so that two runs with the same seed produce identical artifacts and
other implementations can reproduce them from this description:

    state <- (state + 0x9E3779B97F4A7C15) mod 2^64
    z <- state
    z <- ((z XOR (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
    z <- ((z XOR (z >> 27)) * 0x94D049BB133111EB) mod 2^64
    output <- z XOR (z >> 31)

Bounded draws use ``next_u64() mod n`` (the modulo bias is irrelevant for the
list sizes handled here and keeps the definition one line). Shuffles are
Fisher-Yates from the top index down. Substreams are derived by XORing the
run seed with the first 8 bytes of blake2b(label), so stages cannot bleed
randomness into each other.
"""

from __future__ import annotations

import hashlib

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    """SplitMix64 stream starting from a 64-bit seed."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        return self.next_u64() % n

    def shuffle(self, items: list) -> list:
        """In-place Fisher-Yates shuffle; returns the same list."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def sample(self, items: list, k: int) -> list:
        """First k elements of a shuffled copy (without replacement)."""
        if k > len(items):
            raise ValueError(f"sample of {k} from population of {len(items)}")
        pool = list(items)
        self.shuffle(pool)
        return pool[:k]


def label_seed(label: str) -> int:
    """First 8 bytes of blake2b(label), big-endian. Stable across runs."""
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def stream(seed: int, *labels: str) -> SplitMix64:
    """Substream for a purpose, e.g. stream(seed, "split", concept_id)."""
    mixed = seed & _MASK64
    for label in labels:
        mixed ^= label_seed(label)
    return SplitMix64(mixed)
