"""MurmurHash3 (x64, 128-bit variant) over uint64 column prefixes.

A prefix of ``p`` columns is hashed as the ``8 * p`` byte little-endian
concatenation of its values, seed 0, and the low 64 bits (``h1``) of the
128-bit digest are kept.  Two routes are provided: a scalar one that walks
the bytes exactly like the reference C code, and a numpy one that hashes a
whole ``(n, p)`` block of prefixes at once.  They must agree bit for bit.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

MASK64 = (1 << 64) - 1
C1 = 0x87C37B91114253D5
C2 = 0x4CF5AD432745937F


def _rotl(x: int, r: int) -> int:
    return ((x << r) | (x >> (64 - r))) & MASK64


def _fmix(k: int) -> int:
    k ^= k >> 33
    k = (k * 0xFF51AFD7ED558CCD) & MASK64
    k ^= k >> 33
    k = (k * 0xC4CEB9FE1A85EC53) & MASK64
    k ^= k >> 33
    return k


def murmur3_x64_128(data: bytes, seed: int = 0) -> tuple[int, int]:
    """Reference MurmurHash3_x64_128; returns ``(h1, h2)``."""
    length = len(data)
    nblocks = length // 16
    h1 = h2 = seed & MASK64

    for i in range(nblocks):
        k1 = int.from_bytes(data[16 * i : 16 * i + 8], "little")
        k2 = int.from_bytes(data[16 * i + 8 : 16 * i + 16], "little")

        k1 = (k1 * C1) & MASK64
        k1 = _rotl(k1, 31)
        k1 = (k1 * C2) & MASK64
        h1 ^= k1
        h1 = _rotl(h1, 27)
        h1 = (h1 + h2) & MASK64
        h1 = (h1 * 5 + 0x52DCE729) & MASK64

        k2 = (k2 * C2) & MASK64
        k2 = _rotl(k2, 33)
        k2 = (k2 * C1) & MASK64
        h2 ^= k2
        h2 = _rotl(h2, 31)
        h2 = (h2 + h1) & MASK64
        h2 = (h2 * 5 + 0x38495AB5) & MASK64

    tail = data[16 * nblocks :]
    k1 = k2 = 0
    rest = len(tail)
    if rest > 8:
        k2 = int.from_bytes(tail[8:], "little")
        k2 = (k2 * C2) & MASK64
        k2 = _rotl(k2, 33)
        k2 = (k2 * C1) & MASK64
        h2 ^= k2
    if rest > 0:
        k1 = int.from_bytes(tail[:8], "little")
        k1 = (k1 * C1) & MASK64
        k1 = _rotl(k1, 31)
        k1 = (k1 * C2) & MASK64
        h1 ^= k1

    h1 ^= length
    h2 ^= length
    h1 = (h1 + h2) & MASK64
    h2 = (h2 + h1) & MASK64
    h1 = _fmix(h1)
    h2 = _fmix(h2)
    h1 = (h1 + h2) & MASK64
    h2 = (h2 + h1) & MASK64
    return h1, h2


def prefix_hash(columns: Sequence[int]) -> int:
    """Hash one column prefix (scalar route)."""
    if len(columns) == 0:
        raise ValueError("prefix_hash needs at least one column")
    data = b"".join(int(c).to_bytes(8, "little") for c in columns)
    return murmur3_x64_128(data)[0]


# numpy route ---------------------------------------------------------------

_U = np.uint64


def _vrotl(x: np.ndarray, r: int) -> np.ndarray:
    return (x << _U(r)) | (x >> _U(64 - r))


def _vfmix(k: np.ndarray) -> np.ndarray:
    k = k ^ (k >> _U(33))
    k = k * _U(0xFF51AFD7ED558CCD)
    k = k ^ (k >> _U(33))
    k = k * _U(0xC4CEB9FE1A85EC53)
    k = k ^ (k >> _U(33))
    return k


def prefix_hash_many(prefixes: np.ndarray) -> np.ndarray:
    """Hash every row of an ``(n, p)`` uint64 array; returns ``(n,)`` uint64.

    Equivalent to ``[prefix_hash(row) for row in prefixes]``.
    """
    prefixes = np.asarray(prefixes, dtype=np.uint64)
    if prefixes.ndim != 2 or prefixes.shape[1] == 0:
        raise ValueError("expected a 2-D array with at least one column")
    n, p = prefixes.shape
    h1 = np.zeros(n, dtype=np.uint64)
    h2 = np.zeros(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for b in range(p // 2):
            k1 = prefixes[:, 2 * b].copy()
            k2 = prefixes[:, 2 * b + 1].copy()

            k1 = _vrotl(k1 * _U(C1), 31) * _U(C2)
            h1 ^= k1
            h1 = _vrotl(h1, 27) + h2
            h1 = h1 * _U(5) + _U(0x52DCE729)

            k2 = _vrotl(k2 * _U(C2), 33) * _U(C1)
            h2 ^= k2
            h2 = _vrotl(h2, 31) + h1
            h2 = h2 * _U(5) + _U(0x38495AB5)

        if p % 2:
            k1 = _vrotl(prefixes[:, p - 1] * _U(C1), 31) * _U(C2)
            h1 ^= k1

        length = _U(8 * p)
        h1 ^= length
        h2 ^= length
        h1 = h1 + h2
        h2 = h2 + h1
        h1 = _vfmix(h1)
        h2 = _vfmix(h2)
        h1 = h1 + h2
    return h1
