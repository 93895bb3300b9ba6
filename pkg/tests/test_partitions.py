import math

import pytest
from hypothesis import given, strategies as st

from gwgenealogy.partitions import (
    Partition,
    PartitionError,
    breakage_numbers,
    enumerate_chains,
    enumerate_partitions,
    extensions,
    is_maximal,
    maximal_paths,
    merger_numbers,
    parse_chain,
    parse_partition,
    project,
    ranked_binary_count,
    refines,
)

BELL = [1, 1, 2, 5, 15, 52, 203, 877, 4140, 21147, 115975]


@st.composite
def partitions_of(draw, k=None):
    k = k or draw(st.integers(1, 7))
    labels = draw(st.lists(st.integers(0, k - 1), min_size=k, max_size=k))
    blocks = {}
    for x, lab in enumerate(labels, start=1):
        blocks.setdefault(lab, []).append(x)
    return Partition.of(*blocks.values())


def test_parse_round_trip():
    p = parse_partition("3,1|2", 3)
    assert str(p) == "1,3|2"
    assert parse_partition(str(p), 3) == p


@pytest.mark.parametrize("text", ["1,2", "1,2|2,3", "1|2|4", "1,,2|3"])
def test_parse_rejects_bad_input(text):
    with pytest.raises(PartitionError):
        parse_partition(text, 3)


@pytest.mark.parametrize("k", range(1, 9))
def test_enumeration_matches_bell_numbers(k):
    parts = enumerate_partitions(k)
    assert len(parts) == BELL[k]
    assert len(set(parts)) == len(parts)


def test_enumeration_cap():
    assert len(enumerate_partitions(10)) == BELL[10]
    with pytest.raises(PartitionError):
        enumerate_partitions(11)


def test_refines_examples():
    # refines(alpha, beta): every block of alpha is a union of blocks of beta
    assert refines(parse_partition("1,2|3", 3), parse_partition("1|2|3", 3))
    assert not refines(parse_partition("1|2|3", 3), parse_partition("1,2|3", 3))
    assert not refines(parse_partition("1,2|3", 3), parse_partition("1,3|2", 3))
    with pytest.raises(PartitionError):
        refines(parse_partition("1|2", 2), parse_partition("1,2|3", 3))


@given(partitions_of())
def test_refinement_is_reflexive_and_bounded(p):
    els = p.elements
    assert refines(p, p)
    assert refines(Partition.single_block(els), p)
    assert refines(p, Partition.singletons(els))


@given(partitions_of(), st.data())
def test_projection_preserves_refinement(p, data):
    els = list(p.elements)
    sub = data.draw(st.lists(st.sampled_from(els), min_size=1, unique=True))
    coarse = Partition.single_block(els)
    assert refines(project(coarse, sub), project(p, sub))
    assert set(project(p, sub).elements) == set(sub)


def test_project_keeps_labels():
    assert str(project(parse_partition("1,3|2,4", 4), [3, 4])) == "3|4"


def test_chain_endpoints_and_validation():
    c = parse_chain("1,2|3;1|2|3", 3)
    assert c.levels[0] == Partition.single_block([1, 2, 3])
    assert c.levels[-1] == Partition.singletons([1, 2, 3])
    with pytest.raises(PartitionError):
        parse_chain("1|2|3;1,2|3", 3)
    r = c.reversed()
    assert r.coalescent and r.reversed() == c


@pytest.mark.parametrize("k,n", [(2, 1), (2, 3), (3, 1), (3, 2), (4, 2)])
def test_chain_counts(k, n):
    # a chain of length n is a weakly increasing sequence in the refinement order
    chains = enumerate_chains(k, n)
    brute = 0
    parts = enumerate_partitions(k)

    def rec(prev, depth):
        nonlocal brute
        if depth == n:
            brute += 1
            return
        for p in parts:
            if refines(prev, p):
                rec(p, depth + 1)

    rec(Partition.single_block(range(1, k + 1)), 0)
    assert len(chains) == brute
    assert len(enumerate_chains(k, n, coalescent=True)) == brute


def test_breakage_numbers_example():
    c = parse_chain("1,2|3", 3)
    b = breakage_numbers(c)
    assert b[0] == {(1, 2, 3): 2}
    assert b[1] == {(1, 2): 2, (3,): 1}


@given(st.integers(2, 5), st.integers(1, 3), st.data())
def test_breakage_sums_equal_next_block_count(k, n, data):
    c = data.draw(st.sampled_from(enumerate_chains(k, n)))
    levels = c.levels
    for i, level in enumerate(breakage_numbers(c)):
        assert sum(level.values()) == len(levels[i + 1])


@given(st.integers(2, 5), st.integers(1, 3), st.data())
def test_merger_numbers_mirror_breakage(k, n, data):
    c = data.draw(st.sampled_from(enumerate_chains(k, n, coalescent=True)))
    m = merger_numbers(c)
    levels = c.levels
    for j in range(1, n + 2):
        assert sum(m[j].values()) == len(levels[j - 1])


def test_is_maximal():
    ok, q = is_maximal([parse_partition(x, 3) for x in ["1,2,3", "1,2|3", "1|2|3"]])
    assert ok and q == (2, 2)
    ok, q = is_maximal([parse_partition(x, 3) for x in ["1,2,3", "1|2|3"]])
    assert ok and q == (3,)
    ok, _ = is_maximal([parse_partition(x, 4) for x in ["1,2,3,4", "1,2|3,4", "1|2|3|4"]])
    assert not ok


@pytest.mark.parametrize("k,expected", [(2, 1), (3, 3), (4, 18), (5, 180)])
def test_ranked_binary_count_matches_enumeration(k, expected):
    assert ranked_binary_count(k) == expected == len(maximal_paths(k, binary_only=True))


def test_all_maximal_paths_include_multifurcations():
    paths = maximal_paths(3)
    assert len(paths) == 4
    assert sum(1 for p in paths if len(p) == 2) == 1


@given(partitions_of())
def test_extensions_restrict_back(p):
    new = p.k + 1
    exts = extensions(p, new)
    assert len(exts) == len(p) + 1
    for e in exts:
        assert project(e, p.elements) == p


def test_bell_recurrence_via_extensions():
    for k in range(1, 6):
        total = sum(len(extensions(p, k + 1)) for p in enumerate_partitions(k))
        assert total == BELL[k + 1]
        assert math.comb(k, 0) == 1
