import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hisalog.errors import LoadError, OutputError
from hisalog.hisa import TupleArray, canonicalize
from hisalog.io import Dictionary, parse_facts, read_facts, write_relation


def test_duplicates_collapse(tmp_path):
    f = tmp_path / "e.tsv"
    f.write_text("1 2\n2 3\n1 2\n")
    assert read_facts(f, 2).rows() == [(1, 2), (2, 3)]


def test_wrong_column_count_names_line(tmp_path):
    f = tmp_path / "e.tsv"
    f.write_text("1 2\n# note\n\n1 2 3\n")
    with pytest.raises(LoadError, match=r"e\.tsv:4"):
        read_facts(f, 2)


@pytest.mark.parametrize("bad", ["18446744073709551615", "99999999999999999999999", "-1", "1.5", "x"])
def test_rejects_values_outside_the_column_range(bad):
    with pytest.raises(LoadError, match=":1:"):
        parse_facts(f"{bad}\t1\n", 2)


def test_largest_value_accepted():
    assert parse_facts("18446744073709551614\n", 1).rows() == [(2**64 - 2,)]


def test_mixed_separators_and_comments():
    text = "# header\n1\t2\n  3    4  \n\n5 \t 6\n"
    assert parse_facts(text, 2).rows() == [(1, 2), (3, 4), (5, 6)]


def test_missing_file(tmp_path):
    with pytest.raises(LoadError, match="missing"):
        read_facts(tmp_path / "missing.tsv", 2)


def test_random_file_matches_line_oracle(tmp_path):
    rng = random.Random(11)
    lines = []
    for _ in range(10_000):
        sep = rng.choice(["\t", " ", "   "])
        lines.append(sep.join(str(rng.randrange(300)) for _ in range(3)))
    f = tmp_path / "big.tsv"
    f.write_text("\n".join(lines) + "\n")
    oracle = {tuple(int(x) for x in line.split()) for line in lines}
    got = read_facts(f, 3)
    assert got.canonical
    assert got.rows() == sorted(oracle)


def test_empty_relation_writes_empty_file(tmp_path):
    f = tmp_path / "out.tsv"
    write_relation(TupleArray.empty(2), f)
    assert f.read_bytes() == b""
    assert read_facts(f, 2).count == 0


def test_single_row_format(tmp_path):
    f = tmp_path / "out.tsv"
    write_relation(canonicalize(TupleArray.from_rows([(1, 2)], 2)), f)
    assert f.read_bytes() == b"1\t2\n"


def test_write_sorts_raw_input(tmp_path):
    f = tmp_path / "out.tsv"
    write_relation(TupleArray.from_rows([(3, 1), (1, 2), (3, 1)], 2), f)
    assert f.read_text() == "1\t2\n3\t1\n"


def test_write_error_has_path(tmp_path):
    target = tmp_path / "no" / "such" / "dir.tsv"
    with pytest.raises(OutputError, match="dir.tsv"):
        write_relation(TupleArray.empty(1), target)


@settings(max_examples=60)
@given(st.integers(1, 4).flatmap(lambda a: st.tuples(st.just(a), st.sets(st.tuples(*[st.integers(0, 2**64 - 2)] * a), max_size=30))))
def test_round_trip(tmp_path_factory, case):
    arity, rows = case
    rel = canonicalize(TupleArray.from_rows(sorted(rows), arity))
    f = tmp_path_factory.mktemp("rt") / "r.tsv"
    write_relation(rel, f)
    assert read_facts(f, arity) == rel


def test_dictionary_encoding(tmp_path):
    d = Dictionary()
    rel = parse_facts("alice bob\nbob carol\nalice bob\n", 2, d)
    assert d.reverse == ["alice", "bob", "carol"]
    assert d.forward == {"alice": 0, "bob": 1, "carol": 2}
    assert rel.rows() == [(0, 1), (1, 2)]
    f = tmp_path / "s.tsv"
    write_relation(rel, f, d)
    assert f.read_text() == "alice\tbob\nbob\tcarol\n"
    assert read_facts(f, 2, d) == rel
    with pytest.raises(KeyError):
        d.decode(99)
