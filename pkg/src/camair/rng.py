"""Deterministic, platform-stable random streams.

Every random draw in the package comes from a Philox counter-based
generator keyed by a blake2b digest of (seed, context...). Streams are
independent of scheduling order, so parallel and serial execution agree,
and fixtures are portable across platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(seed: int, *context) -> np.random.Generator:
    digest = hashlib.blake2b(repr((seed, *context)).encode(),
                             digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))
