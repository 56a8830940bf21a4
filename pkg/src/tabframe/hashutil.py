"""Deterministic 64-bit hashing and pseudo-random streams.

Two fixed algorithms are used everywhere reproducibility across processes
(and implementations) matters: FNV-1a for hashing byte strings and splitmix64
for turning a seed into a stream of 64-bit values.  Both are fully specified
here, constants included, so results never depend on Python's randomized
``hash()`` or on numpy's generator internals.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

_SM_GOLDEN = 0x9E3779B97F4A7C15
_SM_MUL1 = 0xBF58476D1CE4E5B9
_SM_MUL2 = 0x94D049BB133111EB


def fnv1a_64(data: bytes) -> int:
    """FNV-1a hash of ``data`` as an unsigned 64-bit integer."""
    h = FNV_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def splitmix64_next(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns ``(new_state, output)``."""
    state = (state + _SM_GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * _SM_MUL1) & _MASK64
    z = ((z ^ (z >> 27)) * _SM_MUL2) & _MASK64
    z = z ^ (z >> 31)
    return state, z


def splitmix64_stream(seed: int, n: int) -> np.ndarray:
    """First ``n`` outputs of the splitmix64 stream seeded with ``seed``.

    Vectorized: draw ``k`` (1-based) has state ``seed + k * golden`` and the
    output is the splitmix64 finalizer of that state, which is exactly what
    repeated :func:`splitmix64_next` calls produce.
    """
    ks = np.arange(1, n + 1, dtype=np.uint64)
    states = np.uint64(seed & _MASK64) + ks * np.uint64(_SM_GOLDEN)
    return _splitmix64_finalize(states)


def splitmix64_at(seed: int, indices: np.ndarray) -> np.ndarray:
    """Outputs of splitmix64 draws ``indices + 1`` (0-based indexing) from
    ``seed``, without materializing the whole stream."""
    ks = np.asarray(indices, dtype=np.uint64) + np.uint64(1)
    states = np.uint64(seed & _MASK64) + ks * np.uint64(_SM_GOLDEN)
    return _splitmix64_finalize(states)


def _splitmix64_finalize(states: np.ndarray) -> np.ndarray:
    z = states
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_SM_MUL1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_SM_MUL2)
    return z ^ (z >> np.uint64(31))


def to_unit_interval(values: np.ndarray) -> np.ndarray:
    """Map uint64 values to float64 in ``[0, 1)`` via the top 53 bits."""
    return (np.asarray(values, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def to_symmetric_interval(values: np.ndarray) -> np.ndarray:
    """Map uint64 values to float64 in ``[-1, 1)``: ``(x >> 11) * 2^-53 * 2 - 1``."""
    return to_unit_interval(values) * 2.0 - 1.0
