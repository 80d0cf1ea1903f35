"""Bulk relational-algebra kernels over sorted tuple arrays.

Joins run in two passes: one counts the matches of every outer row, the
second writes them into a buffer sized from that count.  Outer rows are cut
into fixed-size strides; a prefix sum over the per-row counts gives every
stride its own output region, so strides can be written concurrently and the
result does not depend on how many workers ran them.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, InternalError, UsageError
from .hisa import RelationContainer, TupleArray, canonicalize, lookup_many, row_keys

OUTER = "outer"
INNER = "inner"
CONST = "const"

Source = tuple  # (OUTER, col) | (INNER, col) | (CONST, value)


@dataclass(frozen=True)
class ColumnMap:
    """Where each output column comes from."""

    sources: tuple[Source, ...]

    @property
    def output_arity(self) -> int:
        return len(self.sources)

    def validate(self, outer_arity: int, inner_arity: int) -> None:
        if not self.sources:
            raise ConfigError("projection must produce at least one column")
        for src in self.sources:
            _check_source(src, outer_arity, inner_arity)


@dataclass(frozen=True)
class Compare:
    """Row filter ``left <op> right`` evaluated on each (outer, inner) match."""

    op: str
    left: Source
    right: Source

    def __post_init__(self):
        if self.op not in ("!=", "=="):
            raise ConfigError(f"unsupported comparison {self.op!r}")


def _check_source(src: Source, outer_arity: int, inner_arity: int) -> None:
    side, val = src
    if side == OUTER:
        if not 0 <= val < outer_arity:
            raise ConfigError(f"outer column {val} out of range (arity {outer_arity})")
    elif side == INNER:
        if not 0 <= val < inner_arity:
            raise ConfigError(f"inner column {val} out of range (arity {inner_arity})")
    elif side != CONST:
        raise ConfigError(f"unknown column source {src!r}")


@dataclass
class JoinSpec:
    """Binary join of ``outer`` against the index of ``inner``.

    The first ``join_column_count`` columns of ``outer`` are the key; the
    inner index must cover exactly that many leading columns.  A count of 0
    is a cross product and needs no index.
    """

    outer: TupleArray
    inner: RelationContainer
    join_column_count: int
    projection: ColumnMap
    filters: tuple[Compare, ...] = ()
    # per-outer-row (start, count) in the inner relation; filled on first use
    # and shared by the count and materialize passes.  Operands are treated
    # as immutable once the spec exists.
    _match_ranges: tuple[np.ndarray, np.ndarray] | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if isinstance(self.outer, RelationContainer):
            self.outer = self.outer.tuples
        jcc = self.join_column_count
        if jcc < 0 or jcc > self.outer.arity or jcc > self.inner.arity:
            raise ConfigError(f"join column count {jcc} does not fit the operand arities")
        if jcc > 0:
            if self.inner.index is None:
                raise UsageError("inner relation of a join must be indexed")
            if self.inner.index.prefix_len != jcc:
                raise ConfigError(
                    f"inner index covers {self.inner.index.prefix_len} columns, join uses {jcc}"
                )
        self.projection.validate(self.outer.arity, self.inner.arity)
        for f in self.filters:
            _check_source(f.left, self.outer.arity, self.inner.arity)
            _check_source(f.right, self.outer.arity, self.inner.arity)


def default_stride(outer_rows: int, workers: int) -> int:
    return max(1024, math.ceil(outer_rows / (8 * max(1, workers))))


def _ranges(spec: JoinSpec, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
    n = hi - lo
    if spec.join_column_count == 0:
        return np.zeros(n, dtype=np.int64), np.full(n, spec.inner.count, dtype=np.int64)
    keys = spec.outer.data[lo:hi, : spec.join_column_count]
    return lookup_many(spec.inner, keys)


def _expand(starts: np.ndarray, counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Enumerate (outer row, inner row) pairs for per-row match ranges."""
    total = int(counts.sum())
    outer_idx = np.repeat(np.arange(len(counts)), counts)
    first = np.cumsum(counts) - counts
    inner_idx = np.repeat(starts - first, counts) + np.arange(total)
    return outer_idx, inner_idx


def _column(src: Source, outer_rows: np.ndarray, inner_rows: np.ndarray, n: int) -> np.ndarray:
    side, val = src
    if side == OUTER:
        return outer_rows[:, val]
    if side == INNER:
        return inner_rows[:, val]
    return np.full(n, val, dtype=np.uint64)


def _match_ranges(spec: JoinSpec, workers: int) -> tuple[np.ndarray, np.ndarray]:
    """Index lookups for all outer rows, one contiguous chunk per worker."""
    if spec._match_ranges is None:
        n = spec.outer.count
        chunk = max(1, math.ceil(n / max(1, workers)))
        parts = _run(lambda lo, hi: _ranges(spec, lo, hi), _strides(n, chunk), workers)
        if parts:
            spec._match_ranges = (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))
        else:
            spec._match_ranges = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    return spec._match_ranges


def _stride_matches(spec: JoinSpec, lo: int, hi: int):
    """Matched pairs of outer rows ``lo:hi`` after filtering.

    Returns local outer indices, outer rows and inner rows of every pair.
    Needs ``_match_ranges`` to have run.
    """
    starts, counts = spec._match_ranges
    starts, counts = starts[lo:hi], counts[lo:hi]
    o_idx, i_idx = _expand(starts, counts)
    outer_rows = spec.outer.data[lo + o_idx]
    inner_rows = spec.inner.tuples.data[i_idx]
    if spec.filters and len(o_idx):
        keep = np.ones(len(o_idx), dtype=bool)
        for f in spec.filters:
            a = _column(f.left, outer_rows, inner_rows, len(o_idx))
            b = _column(f.right, outer_rows, inner_rows, len(o_idx))
            keep &= (a != b) if f.op == "!=" else (a == b)
        o_idx, outer_rows, inner_rows = o_idx[keep], outer_rows[keep], inner_rows[keep]
    return o_idx, outer_rows, inner_rows


def _strides(n: int, stride: int) -> list[tuple[int, int]]:
    return [(lo, min(n, lo + stride)) for lo in range(0, n, stride)]


def _run(fn, jobs, workers: int):
    """Apply ``fn`` to every job; results come back in job order.

    Worker ``w`` handles jobs ``w, w + workers, ...`` (a grid-stride loop),
    so thread overhead is per worker rather than per stride.
    """
    results = [None] * len(jobs)
    workers = min(workers, len(jobs))
    if workers <= 1:
        return [fn(*j) for j in jobs]

    def lane(w):
        for k in range(w, len(jobs), workers):
            results[k] = fn(*jobs[k])

    with ThreadPoolExecutor(max_workers=workers) as pool:
        # list() re-raises the first worker exception
        list(pool.map(lane, range(workers)))
    return results


def join_row_counts(spec: JoinSpec, workers: int = 1, stride_rows: int | None = None) -> np.ndarray:
    """First pass: number of (filtered) matches of every outer row."""
    n = spec.outer.count
    stride = stride_rows or default_stride(n, workers)
    counts = _match_ranges(spec, workers)[1]
    if not spec.filters:
        return counts.copy()

    def count(lo, hi):
        o_idx, _, _ = _stride_matches(spec, lo, hi)
        return np.bincount(o_idx, minlength=hi - lo).astype(np.int64)

    parts = _run(count, _strides(n, stride), workers)
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def join_count(spec: JoinSpec, workers: int = 1, stride_rows: int | None = None) -> int:
    """Total number of output rows the join will produce; allocates nothing."""
    return int(join_row_counts(spec, workers, stride_rows).sum())


def join_materialize(
    spec: JoinSpec,
    out: np.ndarray | None = None,
    row_counts: np.ndarray | None = None,
    workers: int = 1,
    stride_rows: int | None = None,
) -> TupleArray:
    """Second pass: write one projected row per match into ``out``.

    ``out`` must have exactly ``join_count(spec)`` rows.  Rows come out grouped
    by outer row, in outer order; they are not deduplicated.
    """
    n = spec.outer.count
    stride = stride_rows or default_stride(n, workers)
    if row_counts is None:
        row_counts = join_row_counts(spec, workers, stride)
    total = int(row_counts.sum())
    arity = spec.projection.output_arity
    if out is None:
        out = np.empty((total, arity), dtype=np.uint64)
    if out.shape != (total, arity):
        raise InternalError(f"join output buffer has shape {out.shape}, expected {(total, arity)}")
    offsets = np.concatenate([[0], np.cumsum(row_counts)])
    _match_ranges(spec, workers)

    def write(lo, hi):
        _, outer_rows, inner_rows = _stride_matches(spec, lo, hi)
        begin, end = int(offsets[lo]), int(offsets[hi])
        if len(outer_rows) != end - begin:
            raise InternalError("count and materialize passes disagree")
        m = len(outer_rows)
        for j, src in enumerate(spec.projection.sources):
            out[begin:end, j] = _column(src, outer_rows, inner_rows, m)

    _run(write, _strides(n, stride), workers)
    return TupleArray(out, canonical=False)


def join(spec: JoinSpec, workers: int = 1, stride_rows: int | None = None) -> TupleArray:
    """Count, allocate and materialize in one call."""
    counts = join_row_counts(spec, workers, stride_rows)
    return join_materialize(spec, None, counts, workers, stride_rows)


def merge_sorted(full: TupleArray, delta: TupleArray, buffer, workers: int = 1) -> TupleArray:
    """Union of two disjoint canonical arrays, staged through ``buffer``.

    ``buffer.data`` is a ``(capacity_rows, arity)`` scratch array.  Each row's
    destination is its own index plus its rank in the other array, so tiles
    of either input can be placed independently.  The result is a fresh array.
    """
    if full.arity != delta.arity:
        raise UsageError("merge of relations with different arities")
    n = full.count + delta.count
    scratch = buffer.data
    if scratch.shape[0] < n or scratch.shape[1] != full.arity:
        raise InternalError(
            f"merge buffer holds {scratch.shape[0]} rows of arity {scratch.shape[1]}, "
            f"need {n} rows of arity {full.arity}"
        )
    if delta.count == 0:
        return TupleArray(full.data.copy(), canonical=True)
    kf = row_keys(full.data)
    kd = row_keys(delta.data)

    def place(lo, hi, src, own, other):
        pos = np.arange(lo, hi) + np.searchsorted(other, own[lo:hi])
        scratch[pos] = src.data[lo:hi]

    tile = max(1, math.ceil(max(full.count, delta.count) / max(1, workers)))
    jobs = [(lo, hi, full, kf, kd) for lo, hi in _strides(full.count, tile)]
    jobs += [(lo, hi, delta, kd, kf) for lo, hi in _strides(delta.count, tile)]
    _run(place, jobs, workers)
    return TupleArray(scratch[:n].copy(), canonical=True)


def difference(new_rel: TupleArray, full: TupleArray) -> TupleArray:
    """Rows of ``new_rel`` absent from ``full`` (binary search per row)."""
    if new_rel.arity != full.arity:
        raise UsageError("difference of relations with different arities")
    if new_rel.count == 0 or full.count == 0:
        return TupleArray(new_rel.data.copy(), canonical=True)
    kf = row_keys(full.data)
    kn = row_keys(new_rel.data)
    pos = np.searchsorted(kf, kn)
    present = np.zeros(len(kn), dtype=bool)
    inside = pos < len(kf)
    present[inside] = kf[pos[inside]] == kn[inside]
    return TupleArray(new_rel.data[~present], canonical=True)


def check_permutation(perm: Sequence[int], arity: int) -> tuple[int, ...]:
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(arity)):
        raise ConfigError(f"{perm} is not a permutation of {arity} columns")
    return perm


def permute_columns(rel: TupleArray, perm: Sequence[int], workers: int = 1) -> TupleArray:
    """Reorder columns (output column ``j`` is input column ``perm[j]``) and re-sort."""
    perm = check_permutation(perm, rel.arity)
    if perm == tuple(range(rel.arity)):
        return TupleArray(rel.data.copy(), canonical=rel.canonical)
    return canonicalize(TupleArray(rel.data[:, list(perm)]), workers)


def inverse_permutation(perm: Sequence[int]) -> tuple[int, ...]:
    inv = [0] * len(perm)
    for j, p in enumerate(perm):
        inv[p] = j
    return tuple(inv)


def select_project(
    rel: TupleArray, projection: ColumnMap, filters: Sequence[Compare] = ()
) -> TupleArray:
    """Filter and project a single relation (sources may only name the outer side)."""
    projection.validate(rel.arity, 0)
    data = rel.data
    n = len(data)
    if filters:
        keep = np.ones(n, dtype=bool)
        for f in filters:
            _check_source(f.left, rel.arity, 0)
            _check_source(f.right, rel.arity, 0)
            a = _column(f.left, data, data, n)
            b = _column(f.right, data, data, n)
            keep &= (a != b) if f.op == "!=" else (a == b)
        data = data[keep]
        n = len(data)
    out = np.empty((n, projection.output_arity), dtype=np.uint64)
    for j, src in enumerate(projection.sources):
        out[:, j] = _column(src, data, data, n)
    return TupleArray(out, canonical=False)
