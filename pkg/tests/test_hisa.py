import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hisalog import hisa
from hisalog.errors import ConfigError, UsageError
from hisalog.hisa import (
    SENTINEL,
    RelationContainer,
    TupleArray,
    build_index,
    canonicalize,
    is_canonical,
    lookup_many,
    range_lookup,
)


def rel(rows, arity=2):
    return canonicalize(TupleArray.from_rows(rows, arity))


def scan(rows, prefix):
    """(start, count) by walking the sorted rows."""
    hits = [i for i, r in enumerate(rows) if tuple(r[: len(prefix)]) == tuple(prefix)]
    return (hits[0], len(hits)) if hits else (0, 0)


small_rows = st.integers(1, 4).flatmap(
    lambda a: st.tuples(st.just(a), st.lists(st.tuples(*[st.integers(0, 6)] * a), max_size=60))
)


# canonicalize ----------------------------------------------------------------


def test_canonicalize_sorts_and_dedups():
    assert rel([(2, 1), (1, 2), (2, 1)]).rows() == [(1, 2), (2, 1)]


def test_canonicalize_empty():
    out = canonicalize(TupleArray.empty(1))
    assert out.count == 0 and out.canonical


def test_canonicalize_matches_set_oracle():
    rng = np.random.default_rng(3)
    raw = rng.integers(0, 10, size=(1000, 2)).astype(np.uint64)
    out = canonicalize(TupleArray(raw))
    assert out.count <= 100
    assert out.rows() == sorted({tuple(map(int, r)) for r in raw})


def test_canonicalize_orders_full_uint64_range():
    # values above 2**63 must sort as unsigned
    out = rel([(2**63 + 1, 0), (5, 0), (2**64 - 2, 1), (5, 0)])
    assert out.rows() == [(5, 0), (2**63 + 1, 0), (2**64 - 2, 1)]


def test_parallel_canonicalize_matches_serial():
    rng = np.random.default_rng(4)
    raw = TupleArray(rng.integers(0, 50, size=(70_000, 3)).astype(np.uint64))
    assert canonicalize(raw, workers=4) == canonicalize(raw, workers=1)


@given(small_rows)
def test_canonicalize_idempotent_and_pure(case):
    arity, rows = case
    raw = TupleArray.from_rows(rows, arity)
    before = raw.data.copy()
    once = canonicalize(raw)
    assert np.array_equal(raw.data, before)
    assert canonicalize(once) == once
    assert is_canonical(once.data)
    assert once.rows() == sorted(set(rows))


def test_is_canonical():
    assert is_canonical(np.array([[1, 2], [1, 3], [2, 0]], dtype=np.uint64))
    assert not is_canonical(np.array([[1, 3], [1, 2]], dtype=np.uint64))
    assert not is_canonical(np.array([[1, 2], [1, 2]], dtype=np.uint64))


# index -----------------------------------------------------------------------


def test_index_over_four_keys_points_at_group_starts():
    t = rel([(35,), (11,), (46,), (97,)], arity=1)
    c = RelationContainer(t, build_index(t, 1))
    offsets = {k: range_lookup(c, (k,))[0] for k in (35, 11, 46, 97)}
    assert offsets == {11: 0, 35: 1, 46: 2, 97: 3}
    assert sorted(c.index.offsets[c.index.keys != SENTINEL].tolist()) == [0, 1, 2, 3]


def test_single_row_index():
    t = rel([(7, 8)])
    idx = build_index(t, 1)
    assert idx.occupied == 1
    assert idx.offsets[idx.keys != SENTINEL].tolist() == [0]


def test_lookup_small_example():
    c = RelationContainer.indexed(rel([(1, 2), (1, 5), (4, 9)]), 1)
    assert range_lookup(c, (1,)) == (0, 2)
    assert range_lookup(c, (4,)) == (2, 1)
    assert range_lookup(c, (3,)) == (0, 0)


@pytest.mark.parametrize("lf", [0.0, -0.5, 1.0, 1.5])
def test_bad_load_factor(lf):
    with pytest.raises(ConfigError):
        build_index(rel([(1, 2)]), 1, lf)


@pytest.mark.parametrize("plen", [0, 3])
def test_bad_prefix_len(plen):
    with pytest.raises(ConfigError):
        build_index(rel([(1, 2)]), plen)


def test_index_needs_canonical_input():
    with pytest.raises(UsageError):
        build_index(TupleArray.from_rows([(2, 1), (1, 1)], 2), 1)


def test_lookup_without_index():
    with pytest.raises(UsageError):
        range_lookup(RelationContainer(rel([(1, 2)])), (1,))


def test_empty_relation_index():
    c = RelationContainer.indexed(TupleArray.empty(2), 1)
    assert c.index.occupied == 0
    assert range_lookup(c, (0,)) == (0, 0)
    starts, counts = lookup_many(c, np.array([[0]], dtype=np.uint64))
    assert counts.tolist() == [0]


@settings(max_examples=150)
@given(small_rows, st.floats(0.05, 0.95), st.data())
def test_index_properties(case, lf, data):
    arity, rows = case
    t = rel(rows, arity)
    plen = data.draw(st.integers(1, arity))
    bulk = build_index(t, plen, lf, method="bulk")
    seq = build_index(t, plen, lf, method="sequential")
    assert bulk.tobytes() == seq.tobytes()
    distinct = len({r[:plen] for r in rows})
    assert bulk.occupied == distinct
    assert bulk.slot_count >= distinct / lf
    if distinct:
        assert bulk.occupied / bulk.slot_count <= lf

    c = RelationContainer(t, bulk)
    sorted_rows = t.rows()
    probes = sorted({r[:plen] for r in rows}) + [tuple([7] * plen)]
    starts, counts = lookup_many(c, np.array(probes, dtype=np.uint64).reshape(len(probes), plen))
    for p, s, n in zip(probes, starts.tolist(), counts.tolist()):
        assert range_lookup(c, p) == scan(sorted_rows, p) == (s, n)


def test_colliding_hashes_still_resolve(monkeypatch):
    """Force every prefix into a few hash values; lookups must compare real prefixes."""

    def weak_many(prefixes):
        return (prefixes[:, 0] % np.uint64(3)).astype(np.uint64)

    monkeypatch.setattr(hisa, "prefix_hash_many", weak_many)
    monkeypatch.setattr(hisa, "prefix_hash", lambda cols: int(cols[0]) % 3)
    rng = random.Random(5)
    rows = {(rng.randrange(40), rng.randrange(5)) for _ in range(200)}
    t = rel(rows)
    c = RelationContainer(t, build_index(t, 1))
    assert build_index(t, 1, method="sequential") == c.index
    for k in range(45):
        assert range_lookup(c, (k,)) == scan(t.rows(), (k,))
    starts, counts = lookup_many(c, np.arange(45, dtype=np.uint64).reshape(-1, 1))
    assert list(zip(starts.tolist(), counts.tolist())) == [scan(t.rows(), (k,)) for k in range(45)]


def test_hash_equal_to_sentinel_is_remapped(monkeypatch):
    monkeypatch.setattr(hisa, "prefix_hash_many", lambda p: np.full(len(p), SENTINEL, dtype=np.uint64))
    monkeypatch.setattr(hisa, "prefix_hash", lambda cols: SENTINEL)
    t = rel([(1, 1), (2, 2)])
    c = RelationContainer(t, build_index(t, 1))
    assert c.index.occupied == 2
    assert range_lookup(c, (2,)) == (1, 1)


def test_tuple_array_shape_checks():
    with pytest.raises(ValueError):
        TupleArray(np.zeros(3, dtype=np.uint64))
    with pytest.raises(ValueError):
        TupleArray.from_rows([(1, 2, 3)], 2)
    t = TupleArray.from_rows([(1, 2), (3, 4)], 2)
    assert t.count * t.arity == t.data.size
