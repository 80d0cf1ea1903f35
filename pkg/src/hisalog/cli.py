"""Command-line entry point: ``hisalog run`` and ``hisalog plan``.

Exit codes: 0 success, 1 usage/input errors, 2 memory budget exceeded.
Every flag of ``run`` can also be set through an ``ENGINE_*`` environment
variable (``--memory-budget`` -> ``ENGINE_MEMORY_BUDGET``); flags win.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .builtins import load_program
from .engine import EngineConfig, report_to_json, report_to_tsv, run_program
from .errors import BudgetError, HisalogError
from .frontend import Program, classify_rules, pretty_print, recursive_atoms
from .io import Dictionary, read_facts, write_relation
from .memory import DEFAULT_ALPHA, DEFAULT_BUDGET
from .planner import describe_plan, plan_rule

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_BUDGET = 2

_SUFFIXES = {"k": 1 << 10, "m": 1 << 20, "g": 1 << 30, "t": 1 << 40}


class _UsageExit(Exception):
    def __init__(self, message: str, reported: bool = False):
        super().__init__(message)
        self.reported = reported


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with status 2, which is reserved for budget errors
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageExit(message, reported=True)


def parse_bytes(text: str) -> int:
    """``1024``, ``64M``, ``2g``, ``1.5G`` -> bytes."""
    t = text.strip().lower().removesuffix("b")
    mult = 1
    if t and t[-1] in _SUFFIXES:
        mult = _SUFFIXES[t[-1]]
        t = t[:-1]
    try:
        value = float(t) * mult if "." in t else int(t) * mult
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a byte count: {text!r}") from None
    return int(value)


def parse_workers(text: str) -> int:
    if text == "max":
        return os.cpu_count() or 1
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"workers must be an integer or 'max', got {text!r}") from None


def parse_switch(text: str) -> bool:
    t = text.strip().lower()
    if t in ("on", "1", "true", "yes"):
        return True
    if t in ("off", "0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def parse_fact_arg(text: str) -> tuple[str, str]:
    rel, sep, path = text.partition("=")
    if not sep or not rel or not path:
        raise argparse.ArgumentTypeError(f"expected REL=PATH, got {text!r}")
    return rel, path


# flag dest -> (env var, converter)
_ENV = {
    "workers": ("ENGINE_WORKERS", parse_workers),
    "memory_budget": ("ENGINE_MEMORY_BUDGET", parse_bytes),
    "ebm": ("ENGINE_EBM", parse_switch),
    "alpha": ("ENGINE_ALPHA", int),
    "load_factor": ("ENGINE_LOAD_FACTOR", float),
    "stride": ("ENGINE_STRIDE", int),
}


@dataclass
class RunConfig:
    program: str
    facts: dict[str, str]
    out: Path
    engine: EngineConfig = field(default_factory=EngineConfig)
    emit_facts: bool = False
    emit_stats: bool = False
    symbols: bool = False


def _env_defaults(environ) -> dict:
    defaults = {}
    for dest, (var, conv) in _ENV.items():
        raw = environ.get(var)
        if raw is None or raw == "":
            continue
        try:
            defaults[dest] = conv(raw)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise _UsageExit(f"bad value in {var}: {exc}") from None
    return defaults


def build_parser(run_defaults: dict | None = None) -> argparse.ArgumentParser:
    parser = _Parser(prog="hisalog", description="Datalog engine over hash-indexed sorted arrays.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="evaluate a program to fixpoint")
    run.add_argument("--program", required=True, help="reach, sg, cspa or a path to a .dl file")
    run.add_argument("--facts", action="append", type=parse_fact_arg, default=[], metavar="REL=PATH")
    run.add_argument("--out", required=True, type=Path, help="output directory")
    run.add_argument("--workers", type=parse_workers, default=1, help="thread count or 'max'")
    run.add_argument("--memory-budget", type=parse_bytes, default=DEFAULT_BUDGET, metavar="BYTES")
    run.add_argument("--ebm", type=parse_switch, default=True, metavar="on|off")
    run.add_argument("--alpha", type=int, default=DEFAULT_ALPHA, metavar="K")
    run.add_argument("--load-factor", type=float, default=0.8, metavar="F")
    run.add_argument("--stride", type=int, default=None, metavar="ROWS")
    run.add_argument("--emit-facts", action="store_true", help="write <Rel>.tsv for every derived relation")
    run.add_argument("--stats", action="store_true", help="write stats.json and echo the report to stderr")
    run.add_argument("--symbols", action="store_true", help="treat fact columns as symbols, not integers")
    run.set_defaults(**(run_defaults or {}))

    plan = sub.add_parser("plan", help="print the join chains compiled for each rule")
    plan.add_argument("--program", required=True)
    return parser


def _run_config(ns) -> RunConfig:
    engine = EngineConfig(
        memory_budget_bytes=ns.memory_budget,
        ebm_enabled=ns.ebm,
        alpha=ns.alpha,
        load_factor=ns.load_factor,
        workers=ns.workers,
        stride_rows=ns.stride,
    )
    facts = {}
    for rel, path in ns.facts:
        if rel in facts:
            raise _UsageExit(f"--facts given twice for {rel}")
        facts[rel] = path
    return RunConfig(ns.program, facts, ns.out, engine, ns.emit_facts, ns.stats, ns.symbols)


def _check_facts(program: Program, facts: dict[str, str]) -> None:
    arities = program.arities
    for rel in facts:
        if rel not in arities:
            raise _UsageExit(f"--facts names unknown relation {rel}")
        if rel not in program.edb:
            raise _UsageExit(f"{rel} is derived by rules; it cannot take --facts")
    missing = [r for r in program.edb if r not in facts]
    if missing:
        raise _UsageExit("missing facts for " + ", ".join(f"--facts {r}=..." for r in missing))


def cmd_run(cfg: RunConfig) -> int:
    program = load_program(cfg.program)
    _check_facts(program, cfg.facts)
    arities = program.arities
    dictionary = Dictionary() if cfg.symbols else None
    facts = {rel: read_facts(path, arities[rel], dictionary) for rel, path in cfg.facts.items()}
    db, stats = run_program(program, facts, cfg.engine)

    cfg.out.mkdir(parents=True, exist_ok=True)
    for name in program.idb:
        print(f"{name} {db[name].full.count}")
        if cfg.emit_facts:
            write_relation(db.result(name), cfg.out / f"{name}.tsv", dictionary)
    (cfg.out / "stats.tsv").write_text(report_to_tsv(stats))
    if cfg.emit_stats:
        (cfg.out / "stats.json").write_text(report_to_json(stats) + "\n")
        sys.stderr.write(report_to_tsv(stats))
    return EXIT_OK


def cmd_plan(program_spec: str) -> int:
    program = load_program(program_spec)
    nonrec, rec = classify_rules(program)
    arities = program.arities
    for rule in nonrec + rec:
        delta_atoms = recursive_atoms(rule, program) if rule in rec else None
        print(f"% {pretty_print(Program((), (rule,))).strip()}")
        print(describe_plan(plan_rule(rule, arities, delta_atoms)))
    return EXIT_OK


def main(argv: list[str] | None = None, environ=None) -> int:
    environ = os.environ if environ is None else environ
    try:
        parser = build_parser(_env_defaults(environ))
        ns = parser.parse_args(argv)
        if ns.command == "plan":
            return cmd_plan(ns.program)
        return cmd_run(_run_config(ns))
    except _UsageExit as exc:
        if not exc.reported:
            print(f"hisalog: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetError as exc:
        print(f"hisalog: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (HisalogError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"hisalog: error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
