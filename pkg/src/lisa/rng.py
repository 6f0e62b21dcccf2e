"""Counter-based random numbers.

Every draw is a pure function of its key ``(seed, *counters)``, so the order in
which sources are sampled never changes the values they receive. Scalar and
vectorised (numpy) variants produce identical streams.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    # splitmix64 finaliser
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return z ^ (z >> 31)


def key_of(name: str) -> int:
    """Stable 64-bit key for a source identifier (``hash()`` is salted per process)."""
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


def counter_uniform(seed: int, *counters: int | str) -> float:
    """Uniform draw in [0, 1) keyed by ``seed`` and the counters."""
    z = _mix((seed & _MASK) ^ _GOLDEN)
    for c in counters:
        if isinstance(c, str):
            c = key_of(c)
        z = _mix((z + _GOLDEN + (c & _MASK)) & _MASK)
    return (z >> 11) * (1.0 / (1 << 53))


_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_G = np.uint64(_GOLDEN)


def _mix_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniform_array(seed: int, counters: Sequence[np.ndarray | int | str]) -> np.ndarray:
    """Vectorised :func:`counter_uniform`; array counters broadcast together."""
    with np.errstate(over="ignore"):
        z = _mix_np(np.asarray((seed & _MASK) ^ _GOLDEN, dtype=np.uint64))
        for c in counters:
            if isinstance(c, str):
                c = key_of(c)
            c = np.asarray(c).astype(np.uint64) if not isinstance(c, int) else np.uint64(c & _MASK)
            z = _mix_np(z + _G + c)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def pick(probs: Sequence[float], u: float) -> int:
    """Index of the alternative selected by uniform ``u`` (inverse CDF)."""
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    # rounding slack: fall back to the last alternative with positive mass
    for i in range(len(probs) - 1, -1, -1):
        if probs[i] > 0:
            return i
    raise ValueError("empty distribution")


class Sampler:
    """Seeded probability source for the reasoning cycle.

    Draws are keyed by ``(seed, cycle, source_id)``.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def choose(self, cycle: int, source_id: str, probs: Sequence[float]) -> int:
        return pick(probs, counter_uniform(self.seed, cycle, source_id))
