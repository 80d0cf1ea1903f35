"""Semi-naive fixpoint evaluation over versioned relations.

Every IDB relation has a ``full`` version (everything derived so far), a
``delta`` (what the previous iteration added, always a subset of ``full``
when joins run) and a ``new`` accumulator for the current iteration.  One
iteration does, in order:

1. rebuild indexed copies of relations whose ``full`` grew,
2. run every rule variant, appending raw results to ``new``,
3. sort and deduplicate ``new``,
4. ``delta <- new - full``,
5. ``full <- full ∪ delta`` through a merge buffer, clear ``new``.

All IDB relations iterate together; the loop stops once every delta is
empty, which always happens for positive programs over finite data.
"""

from __future__ import annotations

import json
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, InternalError, LoadError
from .frontend import Program, classify_rules, recursive_atoms
from .hisa import (
    COLUMN_BYTES,
    DEFAULT_LOAD_FACTOR,
    RelationContainer,
    TupleArray,
    build_index,
    canonicalize,
)
from .memory import DEFAULT_ALPHA, DEFAULT_BUDGET, BufferManager, MemoryAccountant
from .planner import DELTA, FULL, RulePlan, VariantPlan, plan_rule
from .ra import JoinSpec, difference, join_materialize, join_row_counts, merge_sorted, permute_columns, select_project

PHASES = ("index", "join", "dedup", "difference", "merge", "other")


@dataclass
class EngineConfig:
    memory_budget_bytes: int = DEFAULT_BUDGET
    ebm_enabled: bool = True
    alpha: int = DEFAULT_ALPHA
    load_factor: float = DEFAULT_LOAD_FACTOR
    workers: int = 1
    stride_rows: int | None = None

    def __post_init__(self):
        if self.memory_budget_bytes <= 0:
            raise ConfigError("memory budget must be positive")
        if self.alpha < 1:
            raise ConfigError("alpha must be at least 1")
        if not 0.0 < self.load_factor < 1.0:
            raise ConfigError("load factor must lie strictly between 0 and 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.stride_rows is not None and self.stride_rows < 1:
            raise ConfigError("stride must be at least 1 row")


@dataclass
class RunStats:
    phase_seconds: dict[str, float] = field(default_factory=lambda: dict.fromkeys(PHASES, 0.0))
    iterations: int = 0
    delta_rows: dict[str, list[int]] = field(default_factory=dict)
    merge_buffer_allocations: int = 0
    merge_buffer_reuses: int = 0
    allocations: int = 0
    peak_bytes: int = 0
    temp_peak_bytes: int = 0
    temp_residual_bytes: int = 0
    relation_rows: dict[str, int] = field(default_factory=dict)

    @contextmanager
    def timed(self, phase: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.phase_seconds[phase] += time.perf_counter() - t0


class RelationVersions:
    """The full/delta/new versions of one relation and its indexed copies."""

    def __init__(self, name: str, arity: int, is_edb: bool = False):
        self.name = name
        self.arity = arity
        self.is_edb = is_edb
        self.full = TupleArray.empty(arity)
        self.delta = TupleArray.empty(arity)
        self.new_acc: list[TupleArray] = []
        self.indexed_copies: dict[tuple[tuple[int, ...], int], RelationContainer] = {}
        self.stale = True

    def __repr__(self) -> str:
        return f"RelationVersions({self.name}, full={self.full.count}, delta={self.delta.count})"


class Database:
    """Relation store plus the memory accountant and buffer manager of one run."""

    def __init__(self, program: Program, config: EngineConfig | None = None):
        self.program = program
        self.config = config or EngineConfig()
        self.accountant = MemoryAccountant(self.config.memory_budget_bytes)
        self.buffers = BufferManager(self.accountant, self.config.alpha, self.config.ebm_enabled)
        self.stats = RunStats()
        edb = set(program.edb)
        self.relations = {
            name: RelationVersions(name, arity, name in edb) for name, arity in program.declarations
        }
        self._seq = 0

    def __getitem__(self, name: str) -> RelationVersions:
        try:
            return self.relations[name]
        except KeyError:
            raise LoadError(f"unknown relation {name!r}") from None

    def rows(self, name: str) -> list[tuple[int, ...]]:
        return self[name].full.rows()

    def result(self, name: str) -> TupleArray:
        return self[name].full

    # storage bookkeeping ---------------------------------------------------

    def _store(self, rel: RelationVersions, version: str, tuples: TupleArray, phase: str) -> None:
        self.accountant.allocate(f"{rel.name}.{version}", tuples.nbytes, phase, "relation")
        setattr(rel, version, tuples)

    def load(self, name: str, tuples: TupleArray | Iterable[Sequence[int]]) -> None:
        """Add EDB facts for ``name``."""
        rel = self[name]
        if not isinstance(tuples, TupleArray):
            tuples = TupleArray.from_rows(tuples, rel.arity)
        if tuples.arity != rel.arity:
            raise LoadError(f"{name} has arity {rel.arity}, facts have arity {tuples.arity}")
        merged = canonicalize(TupleArray(np.concatenate([rel.full.data, tuples.data])), self.config.workers)
        self._store(rel, FULL, merged, "load")
        rel.stale = True

    def _tmp_key(self) -> str:
        self._seq += 1
        return f"tmp#{self._seq}"

    # indexed copies ----------------------------------------------------------

    def register_copy(self, name: str, perm: tuple[int, ...], prefix_len: int) -> None:
        rel = self[name]
        if (perm, prefix_len) not in rel.indexed_copies:
            rel.indexed_copies[(perm, prefix_len)] = None
            rel.stale = True

    def copy(self, name: str, perm: tuple[int, ...], prefix_len: int) -> RelationContainer:
        rel = self[name]
        cont = rel.indexed_copies.get((perm, prefix_len))
        if cont is None:
            raise InternalError(f"copy {name}{perm}/{prefix_len} was not registered or not built")
        return cont

    def refresh_copies(self) -> None:
        """Rebuild the indexed copies of every relation whose full version changed."""
        cfg = self.config
        for rel in self.relations.values():
            if not rel.stale:
                continue
            for perm, plen in list(rel.indexed_copies):
                tuples = permute_columns(rel.full, perm, cfg.workers)
                index = build_index(tuples, plen, cfg.load_factor) if plen else None
                cont = RelationContainer(tuples, index, perm)
                self.accountant.allocate(f"{rel.name}.copy{perm}/{plen}", cont.nbytes, "index", "index")
                rel.indexed_copies[(perm, plen)] = cont
            rel.stale = False

    # rule execution ------------------------------------------------------------

    def run_variant(self, plan: RulePlan, variant: VariantPlan) -> TupleArray:
        """Evaluate one variant's join chain; temporaries are freed before returning."""
        cfg = self.config
        acct = self.accountant
        src = variant.outer
        rel = self[src.relation]
        base = rel.delta if src.version == DELTA else rel.full
        identity = src.permutation == tuple(range(rel.arity))
        head_arity = self[plan.head].arity
        temp_before = acct.category_bytes("temp")
        held: str | None = None

        if identity:
            outer = base
        elif src.version == FULL:
            outer = self.copy(src.relation, src.permutation, 0).tuples
        else:
            held = self._tmp_key()
            acct.allocate(held, base.nbytes, "join", "temp")
            self.stats.temp_peak_bytes = max(self.stats.temp_peak_bytes, acct.category_bytes("temp"))
            outer = TupleArray(base.data[:, list(src.permutation)])

        if not variant.steps:
            with self.stats.timed("join"):
                out = select_project(outer, variant.scan, variant.scan_filters)
            acct.allocate(f"{plan.head}.new#{self._tmp_key()}", out.nbytes, "join", "new")
        for i, step in enumerate(variant.steps):
            last = i == len(variant.steps) - 1
            inner = self.copy(step.inner.relation, step.inner.permutation, step.join_column_count)
            spec = JoinSpec(outer, inner, step.join_column_count, step.projection, step.filters)
            with self.stats.timed("join"):
                counts = join_row_counts(spec, cfg.workers, cfg.stride_rows)
                total = int(counts.sum())
                nbytes = total * step.projection.output_arity * COLUMN_BYTES
                if last:
                    acct.allocate(f"{plan.head}.new#{self._tmp_key()}", nbytes, "join", "new")
                    key = None
                else:
                    key = self._tmp_key()
                    acct.allocate(key, nbytes, "join", "temp")
                    self.stats.temp_peak_bytes = max(self.stats.temp_peak_bytes, acct.category_bytes("temp"))
                buf = np.empty((total, step.projection.output_arity), dtype=np.uint64)
                out = join_materialize(spec, buf, counts, cfg.workers, cfg.stride_rows)
            # the consumed temporary is purged as soon as its join is done
            if held is not None:
                acct.free(held)
            held = key
            outer = out
        if held is not None:
            acct.free(held)
        residual = acct.category_bytes("temp") - temp_before
        self.stats.temp_residual_bytes = max(self.stats.temp_residual_bytes, residual)
        if residual:
            raise InternalError(f"{residual} bytes of temporaries outlived rule {plan.rule}")
        if out.arity != head_arity:
            raise InternalError("rule output arity does not match its head")
        return out

    def _drain_new(self, rel: RelationVersions) -> TupleArray:
        parts = [p.data for p in rel.new_acc]
        rel.new_acc = []
        self.accountant.free_prefix(f"{rel.name}.new#")
        if not parts:
            return TupleArray.empty(rel.arity)
        return canonicalize(TupleArray(np.concatenate(parts)), self.config.workers)

    def _prepare(self, plans: Sequence[RulePlan]) -> None:
        for plan in plans:
            for name, perm, plen in plan.inner_copies():
                self.register_copy(name, perm, plen)
        with self.stats.timed("index"):
            self.refresh_copies()

    def finish(self) -> RunStats:
        st = self.stats
        st.merge_buffer_allocations = self.buffers.allocations
        st.merge_buffer_reuses = self.buffers.reuses
        st.allocations = sum(self.accountant.allocations.values())
        st.peak_bytes = self.accountant.peak
        st.relation_rows = {name: rel.full.count for name, rel in self.relations.items()}
        return st


def evaluate_nonrecursive(program: Program, db: Database) -> Database:
    """Apply every rule whose body reads only EDB relations, once.

    Results seed both ``full`` and ``delta`` of their head relations.
    """
    nonrec, _ = classify_rules(program)
    if not nonrec:
        return db
    arities = program.arities
    plans = [plan_rule(rule, arities) for rule in nonrec]
    for plan in plans:
        for atom in plan.rule.body:
            db[atom.relation]
    db._prepare(plans)
    for plan in plans:
        db[plan.head].new_acc.append(db.run_variant(plan, plan.variants[0]))
    for name in dict.fromkeys(p.head for p in plans):
        rel = db[name]
        with db.stats.timed("dedup"):
            new = db._drain_new(rel)
        with db.stats.timed("difference"):
            fresh = difference(new, rel.full)
        with db.stats.timed("merge"):
            merged = canonicalize(TupleArray(np.concatenate([rel.full.data, fresh.data])), db.config.workers)
            db._store(rel, FULL, merged, "merge")
            db._store(rel, DELTA, fresh, "difference")
        rel.stale = True
    return db


def fixpoint(program: Program, db: Database, config: EngineConfig | None = None) -> tuple[Database, RunStats]:
    """Iterate the recursive rules until no relation gains a tuple."""
    if config is not None and config is not db.config:
        raise ConfigError("pass the configuration when creating the Database")
    _, rec = classify_rules(program)
    stats = db.stats
    if not rec:
        return db, db.finish()
    arities = program.arities
    plans = [plan_rule(rule, arities, recursive_atoms(rule, program)) for rule in rec]
    idb = program.idb
    for name in idb:
        stats.delta_rows.setdefault(name, [])
    for plan in plans:
        for name, perm, plen in plan.inner_copies():
            db.register_copy(name, perm, plen)

    while any(db[name].delta.count for name in idb):
        stats.iterations += 1
        for name in idb:
            stats.delta_rows[name].append(db[name].delta.count)
        with stats.timed("index"):
            db.refresh_copies()
        for plan in plans:
            head = db[plan.head]
            for variant in plan.variants:
                if db[variant.outer.relation].delta.count == 0:
                    continue
                head.new_acc.append(db.run_variant(plan, variant))
        for name in idb:
            rel = db[name]
            with stats.timed("dedup"):
                new = db._drain_new(rel)
            with stats.timed("difference"):
                db._store(rel, DELTA, difference(new, rel.full), "difference")
            if rel.delta.count == 0:
                continue
            with stats.timed("merge"):
                buf = db.buffers.acquire(name, rel.full.count, rel.delta.count, rel.arity)
                merged = merge_sorted(rel.full, rel.delta, buf, db.config.workers)
                db._store(rel, FULL, merged, "merge")
                db.buffers.release(buf)
            rel.stale = True
    return db, db.finish()


def run_program(
    program: Program,
    facts: Mapping[str, TupleArray | Iterable[Sequence[int]]],
    config: EngineConfig | None = None,
) -> tuple[Database, RunStats]:
    """Load EDB facts, seed with the non-recursive rules, run to fixpoint."""
    db = Database(program, config)
    for name, tuples in facts.items():
        if name not in db.relations:
            raise LoadError(f"facts given for unknown relation {name!r}")
        if not db[name].is_edb:
            raise LoadError(f"{name} is derived by rules and cannot be loaded")
        db.load(name, tuples)
    evaluate_nonrecursive(program, db)
    return fixpoint(program, db)


# reporting -------------------------------------------------------------------


def run_stats_report(stats: RunStats) -> dict:
    """Plain-data summary of a run (JSON serializable)."""
    report = asdict(stats)
    report["phase_seconds"] = {p: stats.phase_seconds.get(p, 0.0) for p in PHASES}
    report["total_seconds"] = sum(report["phase_seconds"].values())
    return report


def report_to_json(stats: RunStats) -> str:
    return json.dumps(run_stats_report(stats), indent=2, sort_keys=True)


def report_to_tsv(stats: RunStats) -> str:
    lines = ["phase\tseconds"]
    lines += [f"{p}\t{stats.phase_seconds.get(p, 0.0):.6f}" for p in PHASES]
    for name, sizes in stats.delta_rows.items():
        lines += ["", f"relation\t{name}", "iteration\tdelta_rows"]
        lines += [f"{i}\t{n}" for i, n in enumerate(sizes, start=1)]
    return "\n".join(lines) + "\n"
