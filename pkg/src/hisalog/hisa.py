"""Hash-indexed sorted arrays.

A relation is a flat, row-major ``uint64`` array kept in strictly increasing
lexicographic order.  Join columns are indexed by an open-addressing table
that maps the Murmur3 hash of a column prefix to the offset of the first row
carrying that prefix; the rest of the group is found by scanning forward,
which is cheap because the array is sorted.

Row comparisons are done on a byte view of each row (big-endian columns), so
``memcmp`` order is the lexicographic order of the unsigned column values.
That turns sorting, deduplication and binary search into plain numpy calls.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, UsageError
from .murmur import prefix_hash, prefix_hash_many

SENTINEL = (1 << 64) - 1
COLUMN_BYTES = 8
DEFAULT_LOAD_FACTOR = 0.8

_EMPTY = np.uint64(SENTINEL)
# below this many rows the threaded sort is pure overhead
_PARALLEL_SORT_MIN_ROWS = 1 << 15


class TupleArray:
    """Rows of a fixed arity stored as a contiguous ``(count, arity)`` uint64 array.

    ``canonical`` records whether the rows are known to be sorted and
    duplicate free.  Builders may hold non-canonical arrays (join outputs,
    freshly read facts) but must say so.
    """

    __slots__ = ("data", "canonical")

    def __init__(self, data, canonical: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.uint64)
        if arr.ndim != 2:
            raise ValueError(f"tuple data must be 2-D, got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise ValueError("arity must be positive")
        self.data = arr
        self.canonical = canonical

    @classmethod
    def empty(cls, arity: int) -> "TupleArray":
        return cls(np.empty((0, arity), dtype=np.uint64), canonical=True)

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence[int]], arity: int) -> "TupleArray":
        rows = list(rows)
        if not rows:
            return cls.empty(arity)
        for r in rows:
            if len(r) != arity:
                raise ValueError(f"row {tuple(r)} does not have arity {arity}")
        return cls(np.array(rows, dtype=np.uint64).reshape(len(rows), arity))

    @property
    def arity(self) -> int:
        return self.data.shape[1]

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    def __len__(self) -> int:
        return self.count

    def rows(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in row) for row in self.data.tolist()]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TupleArray):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __repr__(self) -> str:
        state = "canonical" if self.canonical else "raw"
        return f"TupleArray(arity={self.arity}, count={self.count}, {state})"


# row keys ------------------------------------------------------------------


def row_keys(data: np.ndarray) -> np.ndarray:
    """One opaque key per row whose native ordering is lexicographic row order."""
    n, arity = data.shape
    be = np.ascontiguousarray(data, dtype=">u8")
    return be.view(np.dtype((np.void, COLUMN_BYTES * arity))).reshape(n)


def keys_to_rows(keys: np.ndarray, arity: int) -> np.ndarray:
    be = np.ascontiguousarray(keys).view(">u8").reshape(len(keys), arity)
    return be.astype(np.uint64)


def merge_sorted_keys(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stable merge of two sorted key arrays (duplicates kept)."""
    out = np.empty(len(a) + len(b), dtype=a.dtype)
    pos_a = np.arange(len(a)) + np.searchsorted(b, a, side="left")
    pos_b = np.arange(len(b)) + np.searchsorted(a, b, side="right")
    out[pos_a] = a
    out[pos_b] = b
    return out


def _unique_sorted(keys: np.ndarray) -> np.ndarray:
    if len(keys) < 2:
        return keys
    keep = np.empty(len(keys), dtype=bool)
    keep[0] = True
    keep[1:] = keys[1:] != keys[:-1]
    return keys[keep]


def canonicalize(raw: TupleArray, workers: int = 1) -> TupleArray:
    """Sort rows lexicographically and drop duplicates.

    With ``workers > 1`` chunks are sorted on a thread pool and merged
    pairwise; the result is identical to the single-threaded path.
    """
    if raw.canonical:
        return TupleArray(raw.data.copy(), canonical=True)
    arity = raw.arity
    if raw.count == 0:
        return TupleArray.empty(arity)
    keys = row_keys(raw.data)
    if workers > 1 and raw.count >= _PARALLEL_SORT_MIN_ROWS:
        chunks = np.array_split(keys, workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(np.unique, chunks))
        while len(runs) > 1:
            paired = [
                merge_sorted_keys(runs[i], runs[i + 1]) if i + 1 < len(runs) else runs[i]
                for i in range(0, len(runs), 2)
            ]
            runs = paired
        out = _unique_sorted(runs[0])
    else:
        out = np.unique(keys)
    return TupleArray(keys_to_rows(out, arity), canonical=True)


def is_canonical(data: np.ndarray) -> bool:
    if len(data) < 2:
        return True
    prev, nxt = data[:-1], data[1:]
    differs = prev != nxt
    if not differs.any(axis=1).all():
        return False
    col = np.argmax(differs, axis=1)
    rows = np.arange(len(col))
    return bool(np.all(nxt[rows, col] > prev[rows, col]))


def group_starts(data: np.ndarray, prefix_len: int) -> np.ndarray:
    """Offsets of the first row of every distinct prefix in a sorted array."""
    n = data.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    if prefix_len == 0:
        return np.zeros(1, dtype=np.int64)
    pre = data[:, :prefix_len]
    change = np.empty(n, dtype=bool)
    change[0] = True
    change[1:] = np.any(pre[1:] != pre[:-1], axis=1)
    return np.flatnonzero(change)


# index map -----------------------------------------------------------------


def _slot_count(distinct: int, load_factor: float) -> int:
    m = max(1, math.ceil(distinct / load_factor))
    while distinct / m > load_factor:
        m += 1
    # a full table would make absent-key probes loop forever
    if m <= distinct:
        m = distinct + 1
    return m


def _fix_hash(h: np.ndarray) -> np.ndarray:
    return np.where(h == _EMPTY, _EMPTY - np.uint64(1), h)


@dataclass(eq=False)
class IndexMap:
    """Open-addressing table: ``keys[i]`` is a prefix hash, ``offsets[i]`` the
    offset of that prefix group's first row.  Empty slots hold the sentinel
    in both arrays."""

    keys: np.ndarray
    offsets: np.ndarray
    prefix_len: int
    load_factor: float

    @property
    def slot_count(self) -> int:
        return len(self.keys)

    @property
    def occupied(self) -> int:
        return int(np.count_nonzero(self.keys != _EMPTY))

    @property
    def nbytes(self) -> int:
        return self.keys.nbytes + self.offsets.nbytes

    def tobytes(self) -> bytes:
        return self.keys.tobytes() + self.offsets.tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, IndexMap):
            return NotImplemented
        return (
            self.prefix_len == other.prefix_len
            and np.array_equal(self.keys, other.keys)
            and np.array_equal(self.offsets, other.offsets)
        )


def _insert_sequential(hashes: np.ndarray, offsets: np.ndarray, m: int):
    keys = np.full(m, _EMPTY, dtype=np.uint64)
    offs = np.full(m, _EMPTY, dtype=np.uint64)
    for h, off in zip(hashes.tolist(), offsets.tolist()):
        i = h % m
        while keys[i] != _EMPTY:
            i = (i + 1) % m
        keys[i] = h
        offs[i] = off
    return keys, offs


def _insert_bulk(hashes: np.ndarray, offsets: np.ndarray, m: int):
    """Round-synchronous linear probing where the smaller offset wins a slot.

    Each round, every slot with pending contenders keeps the smallest offset
    among them and its current resident; everyone else moves one slot on.
    Because a slot's occupant only ever gets replaced by a smaller offset,
    the table ends up exactly as if the groups had been inserted one by one
    in offset order, whatever the scheduling.
    """
    keys = np.full(m, _EMPTY, dtype=np.uint64)
    offs = np.full(m, _EMPTY, dtype=np.uint64)
    p_hash = hashes.astype(np.uint64)
    p_off = offsets.astype(np.uint64)
    p_pos = (p_hash % np.uint64(m)).astype(np.int64)
    while len(p_pos):
        order = np.lexsort((p_off, p_pos))
        p_hash, p_off, p_pos = p_hash[order], p_off[order], p_pos[order]
        first = np.empty(len(p_pos), dtype=bool)
        first[0] = True
        first[1:] = p_pos[1:] != p_pos[:-1]
        cand = np.flatnonzero(first)
        slots = p_pos[cand]
        resident_off = offs[slots]
        resident_key = keys[slots]
        wins = p_off[cand] < resident_off
        win_idx = cand[wins]
        win_slots = slots[wins]
        # displaced residents rejoin the queue at the next slot
        displaced = wins & (resident_off != _EMPTY)
        d_hash = resident_key[displaced]
        d_off = resident_off[displaced]
        d_pos = (slots[displaced] + 1) % m
        keys[win_slots] = p_hash[win_idx]
        offs[win_slots] = p_off[win_idx]
        stay = np.ones(len(p_pos), dtype=bool)
        stay[win_idx] = False
        p_hash = np.concatenate([p_hash[stay], d_hash])
        p_off = np.concatenate([p_off[stay], d_off])
        p_pos = np.concatenate([(p_pos[stay] + 1) % m, d_pos])
    return keys, offs


def build_index(
    tuples: TupleArray,
    prefix_len: int,
    load_factor: float = DEFAULT_LOAD_FACTOR,
    method: str = "bulk",
) -> IndexMap:
    """Index the distinct ``prefix_len``-column prefixes of a canonical array.

    ``method`` is ``"bulk"`` (vectorized rounds) or ``"sequential"`` (one
    insertion at a time, in offset order); both yield the same table.
    """
    if not (0.0 < load_factor < 1.0):
        raise ConfigError(f"load factor must lie strictly between 0 and 1, got {load_factor}")
    if not (1 <= prefix_len <= tuples.arity):
        raise ConfigError(f"prefix length {prefix_len} outside 1..{tuples.arity}")
    if not tuples.canonical:
        raise UsageError("build_index needs a canonical tuple array")
    starts = group_starts(tuples.data, prefix_len)
    m = _slot_count(len(starts), load_factor)
    if len(starts):
        hashes = _fix_hash(prefix_hash_many(tuples.data[starts, :prefix_len]))
    else:
        hashes = np.empty(0, dtype=np.uint64)
    if method == "bulk":
        keys, offs = _insert_bulk(hashes, starts, m)
    elif method == "sequential":
        keys, offs = _insert_sequential(hashes, starts, m)
    else:
        raise ConfigError(f"unknown index build method {method!r}")
    return IndexMap(keys=keys, offsets=offs, prefix_len=prefix_len, load_factor=load_factor)


# container -----------------------------------------------------------------


@dataclass(eq=False)
class RelationContainer:
    """A canonical tuple array, optionally indexed, possibly a column permutation
    of some logical relation (``permutation[j]`` is the logical column stored at
    position ``j``)."""

    tuples: TupleArray
    index: IndexMap | None = None
    permutation: tuple[int, ...] = ()
    _starts: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.permutation:
            self.permutation = tuple(range(self.tuples.arity))
        if sorted(self.permutation) != list(range(self.tuples.arity)):
            raise ConfigError(f"{self.permutation} is not a permutation of {self.tuples.arity} columns")

    @classmethod
    def indexed(
        cls,
        tuples: TupleArray,
        prefix_len: int,
        load_factor: float = DEFAULT_LOAD_FACTOR,
        permutation: tuple[int, ...] = (),
    ) -> "RelationContainer":
        return cls(tuples, build_index(tuples, prefix_len, load_factor), permutation)

    @property
    def arity(self) -> int:
        return self.tuples.arity

    @property
    def count(self) -> int:
        return self.tuples.count

    @property
    def nbytes(self) -> int:
        return self.tuples.nbytes + (self.index.nbytes if self.index is not None else 0)

    def group_starts(self) -> np.ndarray:
        if self._starts is None:
            plen = self.index.prefix_len if self.index is not None else 0
            self._starts = group_starts(self.tuples.data, plen)
        return self._starts


def range_lookup(container: RelationContainer, prefix: Sequence[int]) -> tuple[int, int]:
    """Return ``(start, count)`` of the rows whose leading columns equal ``prefix``.

    Absent prefixes give ``(0, 0)``.
    """
    index = container.index
    if index is None:
        raise UsageError("range_lookup on a container without an index")
    if len(prefix) != index.prefix_len:
        raise UsageError(f"prefix has {len(prefix)} columns, index covers {index.prefix_len}")
    h = prefix_hash(prefix)
    if h == SENTINEL:
        h -= 1
    data = container.tuples.data
    want = [int(v) for v in prefix]
    m = index.slot_count
    i = h % m
    while True:
        k = int(index.keys[i])
        if k == SENTINEL:
            return 0, 0
        if k == h:
            off = int(index.offsets[i])
            if data[off, : index.prefix_len].tolist() == want:
                end = off + 1
                while end < len(data) and data[end, : index.prefix_len].tolist() == want:
                    end += 1
                return off, end - off
        i = (i + 1) % m


def lookup_many(container: RelationContainer, prefixes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``range_lookup`` for every row of ``prefixes``.

    Group ends come from the container's sorted group-start array, which is
    the forward scan of ``range_lookup`` done once for all groups.
    """
    index = container.index
    if index is None:
        raise UsageError("lookup on a container without an index")
    plen = index.prefix_len
    prefixes = np.asarray(prefixes, dtype=np.uint64)
    n = prefixes.shape[0]
    starts = np.zeros(n, dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    if n == 0 or container.count == 0:
        return starts, counts
    data = container.tuples.data
    m = index.slot_count
    hashes = _fix_hash(prefix_hash_many(prefixes))
    active = np.arange(n)
    pos = (hashes % np.uint64(m)).astype(np.int64)
    found = np.full(n, -1, dtype=np.int64)
    while len(active):
        slot_keys = index.keys[pos]
        empty = slot_keys == _EMPTY
        hit = ~empty & (slot_keys == hashes[active])
        if hit.any():
            cand = np.flatnonzero(hit)
            offs = index.offsets[pos[cand]].astype(np.int64)
            same = np.all(data[offs, :plen] == prefixes[active[cand]], axis=1)
            found[active[cand[same]]] = offs[same]
            hit[cand[~same]] = False
        keep = ~(empty | hit)
        active = active[keep]
        pos = (pos[keep] + 1) % m
    ok = found >= 0
    gs = container.group_starts()
    nxt = np.searchsorted(gs, found[ok], side="right")
    ends = np.where(nxt < len(gs), gs[np.minimum(nxt, len(gs) - 1)], container.count)
    starts[ok] = found[ok]
    counts[ok] = ends - found[ok]
    return starts, counts


def dump_rows(tuples: TupleArray) -> str:
    """Debug dump: one row per line, tab-separated decimal columns."""
    return "".join("\t".join(str(v) for v in row) + "\n" for row in tuples.data.tolist())
