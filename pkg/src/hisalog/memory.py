"""Byte-budget accounting and merge-buffer management."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, ConfigError
from .hisa import COLUMN_BYTES

DEFAULT_BUDGET = 16 << 30
DEFAULT_ALPHA = 5


class MemoryAccountant:
    """Tracks named allocations against a fixed byte budget.

    Every tracked allocation has a key and a category (``relation``,
    ``index``, ``temp``, ``new``, ``merge_buffer`` ...).  Replacing a key
    charges the new size before the old one is released, so the peak
    reflects the moment both copies are alive.
    """

    def __init__(self, budget_bytes: int = DEFAULT_BUDGET):
        if budget_bytes <= 0:
            raise ConfigError("memory budget must be positive")
        self.budget = int(budget_bytes)
        self.in_use = 0
        self.peak = 0
        self.allocations: Counter[str] = Counter()
        self._live: dict[str, tuple[int, str]] = {}
        self._by_category: Counter[str] = Counter()

    @property
    def available(self) -> int:
        return self.budget - self.in_use

    def category_bytes(self, category: str) -> int:
        return self._by_category[category]

    def size_of(self, key: str) -> int:
        return self._live.get(key, (0, ""))[0]

    def check(self, nbytes: int, phase: str) -> None:
        if nbytes > self.available:
            raise BudgetError(phase, nbytes, self.available, self.budget)

    def allocate(self, key: str, nbytes: int, phase: str, category: str = "relation") -> None:
        nbytes = int(nbytes)
        self.check(nbytes, phase)
        old = self._live.get(key)
        self.in_use += nbytes
        self._by_category[category] += nbytes
        self.peak = max(self.peak, self.in_use)
        self.allocations[category] += 1
        if old is not None:
            self._drop(key, *old)
        self._live[key] = (nbytes, category)

    def free(self, key: str) -> None:
        old = self._live.pop(key, None)
        if old is not None:
            self._drop(key, *old)

    def free_prefix(self, prefix: str) -> None:
        for key in [k for k in self._live if k.startswith(prefix)]:
            self.free(key)

    def _drop(self, key: str, nbytes: int, category: str) -> None:
        self.in_use -= nbytes
        self._by_category[category] -= nbytes


@dataclass(eq=False)
class MergeBuffer:
    owner: str
    arity: int
    capacity_rows: int
    in_use: bool = False
    data: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.data is None:
            self.data = np.empty((self.capacity_rows, self.arity), dtype=np.uint64)

    @property
    def nbytes(self) -> int:
        return self.capacity_rows * self.arity * COLUMN_BYTES


class BufferManager:
    """Hands out merge buffers, one retained buffer per relation.

    With eager management on, a buffer that is too small is replaced by one
    sized ``full + delta * K`` for the largest ``K <= alpha`` that fits in
    the remaining budget, and it is kept for later iterations.  With it off,
    each merge gets an exact-size buffer that is dropped afterwards.
    """

    def __init__(self, accountant: MemoryAccountant, alpha: int = DEFAULT_ALPHA, enabled: bool = True):
        if alpha < 1:
            raise ConfigError("alpha must be at least 1")
        self.accountant = accountant
        self.alpha = alpha
        self.enabled = enabled
        self.allocations = 0
        self.reuses = 0
        self._retained: dict[str, MergeBuffer] = {}

    def _key(self, owner: str) -> str:
        return f"{owner}#merge_buffer"

    def acquire(self, owner: str, full_rows: int, delta_rows: int, arity: int) -> MergeBuffer:
        need = full_rows + delta_rows
        row_bytes = arity * COLUMN_BYTES
        current = self._retained.get(owner)
        if self.enabled and current is not None and current.capacity_rows >= need:
            self.reuses += 1
            current.in_use = True
            return current
        if current is not None:
            self._retained.pop(owner)
            self.accountant.free(self._key(owner))
        if self.enabled:
            available = self.accountant.available
            k = self.alpha
            while (full_rows + delta_rows * k) * row_bytes > available:
                k -= 1
                if k == 0:
                    raise BudgetError("merge", need * row_bytes, available, self.accountant.budget)
            capacity = full_rows + delta_rows * k
        else:
            capacity = need
        self.accountant.allocate(self._key(owner), capacity * row_bytes, "merge", "merge_buffer")
        self.allocations += 1
        buf = MergeBuffer(owner=owner, arity=arity, capacity_rows=capacity, in_use=True)
        self._retained[owner] = buf
        return buf

    def release(self, buf: MergeBuffer) -> None:
        buf.in_use = False
        if not self.enabled:
            self._retained.pop(buf.owner, None)
            self.accountant.free(self._key(buf.owner))

    def drop_all(self) -> None:
        for owner in list(self._retained):
            self.accountant.free(self._key(owner))
        self._retained.clear()


def acquire_merge_buffer(
    mgr: BufferManager, owner: str, full_rows: int, delta_rows: int, arity: int
) -> MergeBuffer:
    return mgr.acquire(owner, full_rows, delta_rows, arity)
