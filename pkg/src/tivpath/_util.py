"""Seed derivation helpers.

All randomness in the package flows from explicit integer seeds. Sub-streams
are derived by hashing the master seed together with string tokens, so the
same (seed, purpose) pair always yields the same stream regardless of
platform, process or call order.
"""

import hashlib
import random


def derive_seed(master: int, *tokens: object) -> int:
    """Derive a child seed from a master seed and a token path."""
    material = "/".join([str(int(master))] + [str(t) for t in tokens])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derived_rng(master: int, *tokens: object) -> random.Random:
    """A ``random.Random`` seeded from :func:`derive_seed`."""
    return random.Random(derive_seed(master, *tokens))
