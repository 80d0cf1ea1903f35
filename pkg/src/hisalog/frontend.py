"""A small Datalog dialect: positive Horn clauses with ``!=`` constraints.

Grammar::

    program    := (decl | rule)*
    decl       := ".decl" NAME "(" INT ")"
    rule       := atom ":-" literal ("," literal)* "."
    literal    := atom | term "!=" term
    atom       := NAME "(" term ("," term)* ")"
    term       := NAME | INT

``%`` starts a comment that runs to the end of the line.  Relations only used
in rule bodies must be declared; relations that appear in a head may be
declared or not, their arity is taken from the first use.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Union

from .errors import HisalogError
from .hisa import SENTINEL


class ProgramError(HisalogError):
    kind = "error"

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message = message
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line else ""
        super().__init__(f"{where}{self.kind}: {message}")


class DatalogSyntaxError(ProgramError):
    kind = "syntax error"


class ArityError(ProgramError):
    kind = "arity mismatch"


class RangeRestrictionError(ProgramError):
    kind = "range restriction violation"


class UnknownRelationError(ProgramError):
    kind = "unknown relation"


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


Term = Union[Var, int]


@dataclass(frozen=True)
class Atom:
    relation: str
    terms: tuple[Term, ...]

    @property
    def arity(self) -> int:
        return len(self.terms)

    def variables(self) -> list[str]:
        return [t.name for t in self.terms if isinstance(t, Var)]

    def __str__(self) -> str:
        return f"{self.relation}({', '.join(str(t) for t in self.terms)})"


@dataclass(frozen=True)
class Constraint:
    left: Term
    right: Term
    op: str = "!="

    def variables(self) -> list[str]:
        return [t.name for t in (self.left, self.right) if isinstance(t, Var)]

    def __str__(self) -> str:
        return f"{self.left} {self.op} {self.right}"


@dataclass(frozen=True)
class Rule:
    head: Atom
    body: tuple[Atom, ...]
    constraints: tuple[Constraint, ...] = ()

    def __str__(self) -> str:
        parts = [str(a) for a in self.body] + [str(c) for c in self.constraints]
        return f"{self.head} :- {', '.join(parts)}."


@dataclass(frozen=True)
class Program:
    declarations: tuple[tuple[str, int], ...]
    rules: tuple[Rule, ...]

    @property
    def arities(self) -> dict[str, int]:
        return dict(self.declarations)

    @property
    def idb(self) -> list[str]:
        heads = {r.head.relation for r in self.rules}
        return [name for name, _ in self.declarations if name in heads]

    @property
    def edb(self) -> list[str]:
        heads = {r.head.relation for r in self.rules}
        return [name for name, _ in self.declarations if name not in heads]

    def __str__(self) -> str:
        return pretty_print(self)


def pretty_print(program: Program) -> str:
    lines = [f".decl {name}({arity})" for name, arity in program.declarations]
    lines += [str(r) for r in program.rules]
    return "\n".join(lines) + "\n"


# lexer ---------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>%[^\n]*)
  | (?P<decl>\.decl\b)
  | (?P<if>:-)
  | (?P<neq>!=)
  | (?P<int>[0-9]+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[(),.])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(src: str) -> Iterator[_Tok]:
    line, line_start, pos = 1, 0, 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise DatalogSyntaxError(f"unexpected character {src[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            text = m.group()
            yield _Tok(text if kind == "punct" else kind, text, line, pos - line_start + 1)
        pos = m.end()
    yield _Tok("eof", "", line, pos - line_start + 1)


class _Parser:
    def __init__(self, src: str):
        self.toks = list(_tokenize(src))
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        tok = self.toks[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def expect(self, kind: str, what: str) -> _Tok:
        tok = self.next()
        if tok.kind != kind:
            found = tok.text or "end of input"
            raise DatalogSyntaxError(f"expected {what}, found {found!r}", tok.line, tok.col)
        return tok

    def term(self) -> tuple[Term, _Tok]:
        tok = self.next()
        if tok.kind == "name":
            return Var(tok.text), tok
        if tok.kind == "int":
            value = int(tok.text)
            if value >= SENTINEL:
                raise DatalogSyntaxError(f"constant {value} is too large", tok.line, tok.col)
            return value, tok
        found = tok.text or "end of input"
        raise DatalogSyntaxError(f"expected a variable or constant, found {found!r}", tok.line, tok.col)

    def atom(self, name_tok: _Tok) -> Atom:
        self.expect("(", "'('")
        terms = [self.term()[0]]
        while self.peek().kind == ",":
            self.next()
            terms.append(self.term()[0])
        self.expect(")", "')'")
        return Atom(name_tok.text, tuple(terms))

    def parse(self):
        decls: list[tuple[str, int, _Tok]] = []
        rules: list[tuple[Rule, _Tok, list[_Tok]]] = []
        while self.peek().kind != "eof":
            tok = self.peek()
            if tok.kind == "decl":
                self.next()
                name = self.expect("name", "a relation name")
                self.expect("(", "'('")
                arity = self.expect("int", "an arity")
                self.expect(")", "')'")
                if int(arity.text) < 1:
                    raise DatalogSyntaxError("arity must be positive", arity.line, arity.col)
                decls.append((name.text, int(arity.text), name))
            elif tok.kind == "name":
                rules.append(self.rule())
            else:
                raise DatalogSyntaxError(f"unexpected {tok.text!r}", tok.line, tok.col)
        return decls, rules

    def rule(self):
        head_tok = self.next()
        head = self.atom(head_tok)
        self.expect("if", "':-'")
        body: list[Atom] = []
        body_toks: list[_Tok] = []
        constraints: list[Constraint] = []
        while True:
            tok = self.peek()
            if tok.kind == "name" and self.toks[self.i + 1].kind == "(":
                self.next()
                body.append(self.atom(tok))
                body_toks.append(tok)
            elif tok.kind in ("name", "int"):
                left, _ = self.term()
                self.expect("neq", "'!='")
                right, _ = self.term()
                constraints.append(Constraint(left, right))
            else:
                found = tok.text or "end of input"
                raise DatalogSyntaxError(f"expected a body literal, found {found!r}", tok.line, tok.col)
            if self.peek().kind == ",":
                self.next()
                continue
            self.expect(".", "',' or '.'")
            break
        if not body:
            raise DatalogSyntaxError("rule body needs at least one atom", head_tok.line, head_tok.col)
        return Rule(head, tuple(body), tuple(constraints)), head_tok, body_toks


def parse_program(source: str) -> Program:
    """Parse program text; raises a ``ProgramError`` subclass with line/column."""
    decls, rules = _Parser(source).parse()
    arities: dict[str, int] = {}
    order: list[str] = []
    for name, arity, tok in decls:
        if name in arities and arities[name] != arity:
            raise ArityError(f"{name} declared with arity {arities[name]} and {arity}", tok.line, tok.col)
        if name not in arities:
            arities[name] = arity
            order.append(name)
    for rule, head_tok, _ in rules:
        name, arity = rule.head.relation, rule.head.arity
        if name not in arities:
            arities[name] = arity
            order.append(name)
        elif arities[name] != arity:
            raise ArityError(
                f"{name} used with {arity} terms, arity is {arities[name]}", head_tok.line, head_tok.col
            )
    for rule, head_tok, body_toks in rules:
        bound: set[str] = set()
        for atom, tok in zip(rule.body, body_toks):
            if atom.relation not in arities:
                raise UnknownRelationError(f"{atom.relation} is neither declared nor derived", tok.line, tok.col)
            if arities[atom.relation] != atom.arity:
                raise ArityError(
                    f"{atom.relation} used with {atom.arity} terms, arity is {arities[atom.relation]}",
                    tok.line,
                    tok.col,
                )
            bound.update(atom.variables())
        loose = [v for v in rule.head.variables() if v not in bound]
        for c in rule.constraints:
            loose += [v for v in c.variables() if v not in bound]
        if loose:
            raise RangeRestrictionError(
                f"variable {loose[0]} does not occur in a body atom", head_tok.line, head_tok.col
            )
    return Program(tuple((n, arities[n]) for n in order), tuple(r for r, _, _ in rules))


def classify_rules(program: Program) -> tuple[list[Rule], list[Rule]]:
    """Split rules into (seed rules over EDB only, rules reading some IDB)."""
    idb = set(program.idb)
    nonrec, rec = [], []
    for rule in program.rules:
        (rec if any(a.relation in idb for a in rule.body) else nonrec).append(rule)
    return nonrec, rec


def recursive_atoms(rule: Rule, program: Program) -> list[int]:
    idb = set(program.idb)
    return [i for i, a in enumerate(rule.body) if a.relation in idb]
