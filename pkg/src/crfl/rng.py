"""Deterministic derivation of independent random streams.

All randomness in a run flows from a single master seed.  Every consumer
(client i at round t, server noise at round t, smoothing ensemble, ...)
derives its own stream from a label tuple, so results never depend on
scheduling, thread count, or the order in which streams are created.
"""

from __future__ import annotations

import hashlib

import numpy as np

_SEP = b"\x1f"


def _digest(labels: tuple) -> bytes:
    parts = []
    for label in labels:
        if isinstance(label, float):
            # repr of floats is locale-independent but hex is unambiguous
            parts.append(label.hex().encode())
        else:
            parts.append(str(label).encode())
    return hashlib.sha256(_SEP.join(parts)).digest()


def derive_seed(*labels) -> int:
    """Stable 63-bit integer seed for a label tuple."""
    return int.from_bytes(_digest(labels)[:8], "big") >> 1


def stream(*labels) -> np.random.Generator:
    """Independent numpy Generator keyed by a label tuple."""
    words = np.frombuffer(_digest(labels), dtype=np.uint32)
    return np.random.default_rng(np.random.SeedSequence(entropy=[int(w) for w in words]))
