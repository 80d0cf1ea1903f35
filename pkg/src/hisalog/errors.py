"""Exception hierarchy shared by all layers."""

from __future__ import annotations


class HisalogError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(HisalogError, ValueError):
    """Invalid engine or container configuration (load factor, permutation...)."""


class UsageError(HisalogError):
    """An API was called on an object in the wrong state (e.g. lookup without index)."""


class InternalError(HisalogError, AssertionError):
    """A kernel contract was broken; indicates a bug, not bad input."""


class LoadError(HisalogError):
    """Bad fact file or unknown relation while loading data."""


class PlanError(HisalogError):
    """A rule cannot be compiled into a join chain."""


class BudgetError(HisalogError, MemoryError):
    """The engine-wide memory budget cannot cover an allocation."""

    def __init__(self, phase: str, requested: int, available: int, budget: int):
        self.phase = phase
        self.requested = requested
        self.available = available
        self.budget = budget
        super().__init__(
            f"not enough memory in phase '{phase}': requested {requested} bytes, "
            f"{available} of {budget} bytes available"
        )


class OutputError(HisalogError, OSError):
    """Writing a result or report file failed."""
