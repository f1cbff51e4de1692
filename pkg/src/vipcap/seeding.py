"""Stable seed derivation.

Every random draw in the package flows from one integer seed. Subcomponent
and per-step seeds are derived by hashing (seed, label) so runs are
reproducible across processes and platforms, with no hidden global state.
"""

import hashlib


def stable_hash64(data: bytes) -> int:
    """Map bytes to a stable unsigned 64-bit integer."""
    digest = hashlib.blake2b(data, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(seed: int, label: str) -> int:
    """Derive a child seed from a base seed and a component/step label."""
    payload = (seed % 2**64).to_bytes(8, "little") + label.encode("utf-8")
    return stable_hash64(payload)
