"""Deterministic sub-seed derivation.

Every random stream in the library is keyed by a root seed plus a role tag
(strings and/or integers), mixed with splitmix64.  Adding a new consumer with
a fresh tag never perturbs the streams of existing consumers.
"""

import hashlib

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> int:
    z = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _tag_to_int(tag) -> int:
    if isinstance(tag, str):
        digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big")
    return int(tag) & _MASK64


def derive_seed(seed: int, *tags) -> int:
    """Derive a 64-bit sub-seed from a root seed and a sequence of role tags.

    Tags may be strings (hashed with blake2b, stable across processes) or
    integers.  The same `(seed, tags)` always yields the same sub-seed.
    """
    state = splitmix64(int(seed) & _MASK64)
    for tag in tags:
        state = splitmix64(state ^ _tag_to_int(tag))
    return state
