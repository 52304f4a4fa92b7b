"""Stable seed derivation: one global seed, one independent stream per named stage."""

import hashlib


def derive_seed(seed: int, *names) -> int:
    """63-bit seed from ``seed`` and any number of stage names or indices."""
    key = "/".join([str(int(seed))] + [str(n) for n in names]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1
