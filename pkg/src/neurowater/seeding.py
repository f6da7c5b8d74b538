"""Sub-seed derivation: ``sub = master XOR stable_hash(path)``.

The hash is the first eight bytes of SHA-256 over the UTF-8 path, so adding
a node leaves every other component's random stream untouched.
"""

import hashlib

MASK64 = (1 << 64) - 1


def stable_hash(path: str) -> int:
    return int.from_bytes(hashlib.sha256(path.encode("utf-8")).digest()[:8], "big")


def derive_seed(master: int, path: str) -> int:
    return (int(master) & MASK64) ^ stable_hash(path)
