"""The REACH, SG and CSPA programs, built directly as syntax trees.

The same programs ship as ``.dl`` files next to this module; the test suite
checks that parsing those files gives back exactly these trees.
"""

from __future__ import annotations

from importlib import resources

from .errors import LoadError
from .frontend import Atom, Constraint, Program, Rule, Var, parse_program


def _atom(rel: str, *names: str) -> Atom:
    return Atom(rel, tuple(Var(n) for n in names))


def _rule(head: Atom, *body, neq: tuple[str, str] | None = None) -> Rule:
    constraints = (Constraint(Var(neq[0]), Var(neq[1])),) if neq else ()
    return Rule(head, tuple(body), constraints)


def reach() -> Program:
    return Program(
        (("Edge", 2), ("Reach", 2)),
        (
            _rule(_atom("Reach", "from", "to"), _atom("Edge", "from", "to")),
            _rule(_atom("Reach", "from", "to"), _atom("Edge", "from", "mid"), _atom("Reach", "mid", "to")),
        ),
    )


def sg() -> Program:
    return Program(
        (("Edge", 2), ("SG", 2)),
        (
            _rule(_atom("SG", "x", "y"), _atom("Edge", "p", "x"), _atom("Edge", "p", "y"), neq=("x", "y")),
            _rule(
                _atom("SG", "x", "y"),
                _atom("Edge", "a", "x"),
                _atom("SG", "a", "b"),
                _atom("Edge", "b", "y"),
            ),
        ),
    )


def cspa() -> Program:
    vf, va, ma = "ValueFlow", "ValueAlias", "MemoryAlias"
    return Program(
        (("assign", 2), ("dereference", 2), (vf, 2), (va, 2), (ma, 2)),
        (
            _rule(_atom(vf, "x", "y"), _atom(vf, "x", "z"), _atom(vf, "z", "y")),
            _rule(_atom(va, "x", "y"), _atom(vf, "z", "x"), _atom(vf, "z", "y")),
            _rule(_atom(vf, "x", "y"), _atom("assign", "x", "z"), _atom(ma, "z", "y")),
            _rule(
                _atom(ma, "x", "w"),
                _atom("dereference", "y", "x"),
                _atom(va, "y", "z"),
                _atom("dereference", "z", "w"),
            ),
            _rule(_atom(va, "x", "y"), _atom(vf, "z", "x"), _atom(ma, "z", "w"), _atom(vf, "w", "y")),
            _rule(_atom(vf, "y", "x"), _atom("assign", "y", "x")),
            _rule(_atom(vf, "x", "x"), _atom("assign", "x", "y")),
            _rule(_atom(vf, "x", "x"), _atom("assign", "y", "x")),
            _rule(_atom(ma, "x", "x"), _atom("assign", "y", "x")),
            _rule(_atom(ma, "x", "x"), _atom("assign", "x", "y")),
        ),
    )


BUILTINS = {"reach": reach, "sg": sg, "cspa": cspa}


def builtin_source(name: str) -> str:
    if name not in BUILTINS:
        raise KeyError(f"unknown builtin program {name!r}; choose from {sorted(BUILTINS)}")
    return resources.files("hisalog.programs").joinpath(f"{name}.dl").read_text()


def builtin_program(name: str) -> Program:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise KeyError(f"unknown builtin program {name!r}; choose from {sorted(BUILTINS)}") from None


def load_program(name_or_path: str) -> Program:
    """A builtin name or a path to a ``.dl`` file."""
    if name_or_path in BUILTINS:
        return builtin_program(name_or_path)
    try:
        with open(name_or_path, encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise LoadError(f"unknown program {name_or_path!r}: not one of {sorted(BUILTINS)} and no such file") from None
    except OSError as exc:
        raise LoadError(f"cannot read {name_or_path}: {exc.strerror or exc}") from exc
    return parse_program(text)
