"""Seeded random streams built on the Philox counter-based generator.

All stochastic behaviour in this package flows through these two helpers so
that a run is bit-reproducible from a single 64-bit seed.  Substreams are
derived through ``numpy.random.SeedSequence`` spawn keys, which gives
statistically independent streams for distinct key paths (e.g. one stream
per ray) without any sequential coupling between them.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _normalize(seed: int) -> int:
    return int(seed) & _MASK64


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return an independent ``Generator`` for the stream ``(seed, *key)``.

    Identical ``(seed, key)`` always yields a generator with identical
    output; distinct key paths yield independent streams.
    """
    ss = np.random.SeedSequence(entropy=_normalize(seed),
                                spawn_key=tuple(_normalize(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """Derive a child 64-bit seed from ``seed`` and a key path."""
    ss = np.random.SeedSequence(entropy=_normalize(seed),
                                spawn_key=tuple(_normalize(k) for k in key))
    return int(ss.generate_state(2, np.uint32).view(np.uint64)[0])
