"""Compile rules into chains of binary joins.

Each rule becomes one chain per *variant*.  A variant names the body atom
read from the delta version; that atom drives the chain as the first outer
relation and the remaining atoms are joined in body order against indexed
copies of their full versions.  Intermediate results are temporary
relations holding only the variables still needed later, with the next
join's key columns first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import PlanError
from .frontend import Atom, Constraint, Rule, Var
from .ra import CONST, INNER, OUTER, ColumnMap, Compare

FULL = "full"
DELTA = "delta"
TEMP = "temp"


@dataclass(frozen=True)
class Source:
    relation: str
    version: str
    permutation: tuple[int, ...]


@dataclass(frozen=True)
class JoinStep:
    outer: Source
    inner: Source
    join_column_count: int
    projection: ColumnMap
    filters: tuple[Compare, ...] = ()

    def __str__(self) -> str:
        return (
            f"{_fmt(self.outer)} ⋈[{self.join_column_count}] {_fmt(self.inner)} "
            f"-> {list(self.projection.sources)}"
        )


@dataclass(frozen=True)
class VariantPlan:
    delta_atom: int | None
    outer: Source
    steps: tuple[JoinStep, ...]
    # single-atom bodies: filter + project the outer directly
    scan: ColumnMap | None = None
    scan_filters: tuple[Compare, ...] = ()


@dataclass(frozen=True)
class RulePlan:
    rule: Rule
    head: str
    variants: tuple[VariantPlan, ...]

    def inner_copies(self) -> set[tuple[str, tuple[int, ...], int]]:
        """(relation, permutation, prefix_len) of every full-version copy the plan reads."""
        need = set()
        for v in self.variants:
            if v.outer.version == FULL and v.outer.permutation != _identity(len(v.outer.permutation)):
                need.add((v.outer.relation, v.outer.permutation, 0))
            for s in v.steps:
                need.add((s.inner.relation, s.inner.permutation, s.join_column_count))
        return need


def _fmt(src: Source) -> str:
    perm = ",".join(map(str, src.permutation))
    return f"{src.relation}.{src.version}[{perm}]"


def describe_plan(plan: RulePlan) -> str:
    """Human-readable join chains, one block per variant."""
    lines = []
    for v in plan.variants:
        tag = "non-recursive" if v.delta_atom is None else f"delta on body atom {v.delta_atom}"
        lines.append(f"  variant ({tag}):")
        if v.scan is not None:
            lines.append(f"    scan {_fmt(v.outer)} -> {list(v.scan.sources)}")
            lines += [f"      filter {f.left} {f.op} {f.right}" for f in v.scan_filters]
        for s in v.steps:
            lines.append(f"    {s}")
            lines += [f"      filter {f.left} {f.op} {f.right}" for f in s.filters]
    return "\n".join(lines)


def _identity(n: int) -> tuple[int, ...]:
    return tuple(range(n))


def _first_positions(atom: Atom) -> dict[str, int]:
    pos: dict[str, int] = {}
    for i, t in enumerate(atom.terms):
        if isinstance(t, Var) and t.name not in pos:
            pos[t.name] = i
    return pos


def _term_source(term, sources: dict[str, tuple]) -> tuple:
    if isinstance(term, Var):
        return sources[term.name]
    return (CONST, int(term))


def _take_constraints(pending: list[Constraint], sources: dict[str, tuple]) -> list[Compare]:
    ready = [c for c in pending if all(v in sources for v in c.variables())]
    for c in ready:
        pending.remove(c)
    return [Compare(c.op, _term_source(c.left, sources), _term_source(c.right, sources)) for c in ready]


def _outer_layout(atom: Atom, perm: Sequence[int]):
    """Variables per permuted column plus the filters implied by constants and repeats."""
    layout: list[str | None] = []
    filters: list[Compare] = []
    seen: dict[str, int] = {}
    for j, col in enumerate(perm):
        t = atom.terms[col]
        if isinstance(t, Var):
            if t.name in seen:
                filters.append(Compare("==", (OUTER, j), (OUTER, seen[t.name])))
                layout.append(None)
            else:
                seen[t.name] = j
                layout.append(t.name)
        else:
            filters.append(Compare("==", (OUTER, j), (CONST, int(t))))
            layout.append(None)
    return layout, filters


def _check_range_restriction(rule: Rule) -> None:
    bound = {v for a in rule.body for v in a.variables()}
    for v in rule.head.variables():
        if v not in bound:
            raise PlanError(f"head variable {v} of {rule} is not bound by the body")
    for c in rule.constraints:
        for v in c.variables():
            if v not in bound:
                raise PlanError(f"constraint variable {v} of {rule} is not bound by the body")


def _plan_variant(rule: Rule, order: list[int], delta_atom: int | None) -> VariantPlan:
    atoms = [rule.body[i] for i in order]
    pending = list(rule.constraints)
    head_vars = set(rule.head.variables())
    first = atoms[0]
    version = DELTA if delta_atom is not None else FULL

    if len(atoms) == 1:
        perm = _identity(first.arity)
        layout, filters = _outer_layout(first, perm)
        sources = {v: (OUTER, j) for j, v in enumerate(layout) if v is not None}
        filters += _take_constraints(pending, sources)
        proj = ColumnMap(tuple(_term_source(t, sources) for t in rule.head.terms))
        return VariantPlan(delta_atom, Source(first.relation, version, perm), (), proj, tuple(filters))

    first_pos = _first_positions(first)
    key = [v for v in _first_positions(atoms[1]) if v in first_pos]
    lead = [first_pos[v] for v in key]
    perm = tuple(lead + [c for c in range(first.arity) if c not in lead])
    layout, outer_filters = _outer_layout(first, perm)
    outer_src = Source(first.relation, version, perm)

    steps: list[JoinStep] = []
    current = outer_src
    for s in range(1, len(atoms)):
        inner_atom = atoms[s]
        outer_vars = {v: j for j, v in enumerate(layout) if v is not None}
        inner_first = _first_positions(inner_atom)
        key = [v for v in inner_first if v in outer_vars]
        if [layout[j] for j in range(len(key))] != key:
            raise PlanError(f"internal: outer layout {layout} does not lead with join key {key}")
        lead = [inner_first[v] for v in key]
        inner_perm = tuple(lead + [c for c in range(inner_atom.arity) if c not in lead])

        filters = list(outer_filters) if s == 1 else []
        sources = {v: (OUTER, j) for v, j in outer_vars.items()}
        for j, col in enumerate(inner_perm):
            t = inner_atom.terms[col]
            if not isinstance(t, Var):
                filters.append(Compare("==", (INNER, j), (CONST, int(t))))
            elif j < len(key):
                continue
            elif t.name in sources:
                filters.append(Compare("==", (INNER, j), sources[t.name]))
            else:
                sources[t.name] = (INNER, j)
        filters += _take_constraints(pending, sources)

        if s == len(atoms) - 1:
            proj = ColumnMap(tuple(_term_source(t, sources) for t in rule.head.terms))
            layout = []
        else:
            later = {v for a in atoms[s + 1 :] for v in a.variables()}
            needed = later | head_vars | {v for c in pending for v in c.variables()}
            next_key = [v for v in _first_positions(atoms[s + 1]) if v in sources]
            rest = [v for v in sources if v in needed and v not in next_key]
            layout = next_key + rest
            if layout:
                proj = ColumnMap(tuple(sources[v] for v in layout))
            else:
                # nothing left to carry; keep one dummy column so the temp has an arity
                layout = [None]
                proj = ColumnMap(((CONST, 0),))
        steps.append(
            JoinStep(
                outer=current,
                inner=Source(inner_atom.relation, FULL, inner_perm),
                join_column_count=len(key),
                projection=proj,
                filters=tuple(filters),
            )
        )
        current = Source(f"tmp{s}", TEMP, _identity(len(layout)) if layout else ())
    return VariantPlan(delta_atom, outer_src, tuple(steps))


def plan_rule(rule: Rule, schema: dict[str, int], delta_atoms: Sequence[int] | None = None) -> RulePlan:
    """Compile ``rule``.  ``delta_atoms`` lists the body positions that get a
    delta-driven variant; ``None`` or empty means a single full-only plan."""
    if not rule.body:
        raise PlanError(f"rule for {rule.head.relation} has an empty body")
    for atom in (rule.head, *rule.body):
        if atom.relation not in schema:
            raise PlanError(f"relation {atom.relation} is not in the schema")
        if schema[atom.relation] != atom.arity:
            raise PlanError(f"{atom} does not match arity {schema[atom.relation]}")
    _check_range_restriction(rule)
    k = len(rule.body)
    if delta_atoms:
        variants = tuple(
            _plan_variant(rule, [d] + [i for i in range(k) if i != d], d) for d in delta_atoms
        )
    else:
        variants = (_plan_variant(rule, list(range(k)), None),)
    return RulePlan(rule, rule.head.relation, variants)
