"""Fact files: whitespace-separated columns, one tuple per line.

Columns are unsigned decimal integers unless a :class:`Dictionary` is given,
in which case any token is accepted and mapped to a dense integer id.
Output files are always tab separated and in canonical (sorted) row order.
"""

from __future__ import annotations

import os
import re

import numpy as np

from .errors import LoadError, OutputError
from .hisa import SENTINEL, TupleArray, canonicalize

_UINT = re.compile(r"[0-9]+\Z")


class Dictionary:
    """Bijective symbol <-> id mapping; ids are handed out from 0 in order of first use."""

    def __init__(self):
        self.forward: dict[str, int] = {}
        self.reverse: list[str] = []

    def __len__(self) -> int:
        return len(self.reverse)

    def encode(self, token: str) -> int:
        value = self.forward.get(token)
        if value is None:
            value = len(self.reverse)
            self.forward[token] = value
            self.reverse.append(token)
        return value

    def decode(self, value: int) -> str:
        try:
            return self.reverse[value]
        except IndexError:
            raise KeyError(f"id {value} is not in the dictionary") from None


def parse_facts(text: str, arity: int, dictionary: Dictionary | None = None, origin: str = "<text>") -> TupleArray:
    rows: list[list[int]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        cols = stripped.split()
        if len(cols) != arity:
            raise LoadError(f"{origin}:{lineno}: expected {arity} columns, found {len(cols)}")
        if dictionary is not None:
            rows.append([dictionary.encode(c) for c in cols])
            continue
        row = []
        for c in cols:
            if not _UINT.match(c):
                raise LoadError(f"{origin}:{lineno}: {c!r} is not an unsigned integer")
            value = int(c)
            if value >= SENTINEL:
                raise LoadError(f"{origin}:{lineno}: {c} does not fit in 64 bits (max {SENTINEL - 1})")
            row.append(value)
        rows.append(row)
    if not rows:
        return TupleArray.empty(arity)
    return canonicalize(TupleArray(np.array(rows, dtype=np.uint64)))


def read_facts(path: str | os.PathLike, arity: int, dictionary: Dictionary | None = None) -> TupleArray:
    """Read a fact file into a canonical tuple array (duplicates collapse)."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return parse_facts(text, arity, dictionary, str(path))


def format_relation(rel: TupleArray, dictionary: Dictionary | None = None) -> str:
    if dictionary is None:
        return "".join("\t".join(map(str, row)) + "\n" for row in rel.data.tolist())
    return "".join("\t".join(dictionary.decode(v) for v in row) + "\n" for row in rel.data.tolist())


def write_relation(rel: TupleArray, path: str | os.PathLike, dictionary: Dictionary | None = None) -> None:
    if not rel.canonical:
        rel = canonicalize(rel)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(format_relation(rel, dictionary))
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc
