"""Counter-based random streams keyed by structured labels.

A substream is a Philox generator whose 128-bit key is derived by hashing
the integer label tuple, so streams are deterministic, order-independent,
and independent across distinct labels.
"""
from __future__ import annotations

import hashlib

import numpy as np


def substream(*labels: int) -> np.random.Generator:
    payload = ",".join(str(int(x)) for x in labels).encode()
    digest = hashlib.sha256(payload).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
