import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgzsl.errors import CycleDetected, EmptyConcept, MalformedLine, NegativeWeight
from kgzsl.kg_ingest import (
    Category,
    EdgeSource,
    RelationType,
    SourceEdge,
    format_edge_dump,
    load_edge_source,
    neighbors,
    normalize_concept,
    parse_edge_dump,
    parse_taxonomy,
)

R = RelationType("RelatedTo")


@pytest.mark.parametrize(
    "raw, expected",
    [("closed", "closed"), ("/c/en/Open_Bottle", "open_bottle"), ("  Folded Cloth ", "folded_cloth")],
)
def test_normalize_concept(raw, expected):
    assert normalize_concept(raw) == expected


@pytest.mark.parametrize("raw", ["", "   ", "/c/en/"])
def test_normalize_concept_empty(raw):
    with pytest.raises(EmptyConcept):
        normalize_concept(raw)


def test_parse_single_line():
    edges, skipped = parse_edge_dump(["dog\tIsA\tanimal\t2.0"])
    assert edges == [SourceEdge("dog", RelationType("IsA"), "animal", 2.0)]
    assert skipped == 0


def test_three_fields_strict_vs_skip():
    with pytest.raises(MalformedLine) as info:
        parse_edge_dump(["a\tRelatedTo\tb"])
    assert info.value.line_no == 1
    edges, skipped = parse_edge_dump(["a\tRelatedTo\tb"], mode="skip")
    assert edges == [] and skipped == 1


def test_self_loop_rejected():
    with pytest.raises(MalformedLine):
        parse_edge_dump(["x\tIsA\tx\t1.0"])
    assert parse_edge_dump(["x\tIsA\tx\t1.0"], mode="skip") == ([], 1)


def test_negative_weight():
    with pytest.raises(NegativeWeight):
        parse_edge_dump(["a\tR\tb\t-0.5"])
    assert parse_edge_dump(["a\tR\tb\t-0.5"], mode="skip")[1] == 1


@pytest.mark.parametrize("weight", ["abc", "nan", "inf"])
def test_bad_weight(weight):
    with pytest.raises(MalformedLine):
        parse_edge_dump([f"a\tR\tb\t{weight}"])


def test_comments_blank_lines_and_line_numbers():
    lines = ["# header", "", "a\tR\tb\t1", "broken"]
    with pytest.raises(MalformedLine) as info:
        parse_edge_dump(lines)
    assert info.value.line_no == 4


def test_language_filter_and_uris():
    lines = ["/c/en/Dog\t/r/IsA\t/c/en/animal\t1.0", "/c/fr/chien\t/r/IsA\t/c/fr/animal\t1.0"]
    edges, skipped = parse_edge_dump(lines)
    assert edges == [SourceEdge("dog", RelationType("IsA"), "animal", 1.0)]
    assert skipped == 0


def test_category_is_recorded():
    edges, _ = parse_edge_dump(["a\tHypernym\tb\t1"], category=Category.LEXICOGRAPHIC)
    assert edges[0].relation.category is Category.LEXICOGRAPHIC


def test_taxonomy_roots():
    t = parse_taxonomy(["cat\tmammal", "mammal\tentity"])
    assert t.roots == frozenset({"entity"})
    assert len(t.entries) == 2
    assert t.ancestors("cat") == {"mammal", "entity"}


def test_taxonomy_cycle():
    with pytest.raises(CycleDetected):
        parse_taxonomy(["a\tb", "b\ta"])
    with pytest.raises(CycleDetected):
        parse_taxonomy(["a\tb", "b\tc", "c\ta"])


def test_empty_taxonomy():
    t = parse_taxonomy([])
    assert len(t.entries) == 0 and t.roots == frozenset()


def test_taxonomy_accepts_dag_with_shared_ancestor():
    t = parse_taxonomy(["a\tb", "a\tc", "b\tr", "c\tr"])
    assert t.roots == frozenset({"r"})


def test_neighbors_examples():
    e1 = SourceEdge("a", RelationType("R"), "b", 1.0)
    src = EdgeSource([e1])
    assert neighbors(src, "a") == [e1]
    assert neighbors(src, "c") == []
    e2 = SourceEdge("c", RelationType("S"), "a", 2.0)
    src = EdgeSource([e1, e2])
    assert neighbors(src, "a") == [e1, e2]


def test_load_edge_source(tmp_path):
    p = tmp_path / "dump.tsv"
    p.write_text("a\tR\tb\t1.0\nbad line\n", encoding="utf-8")
    src, skipped = load_edge_source(p, mode="skip")
    assert len(src) == 1 and skipped == 1


concepts = st.sampled_from(["a", "b", "c", "d", "e"])
edge_st = st.builds(
    SourceEdge,
    concepts,
    st.sampled_from([RelationType("R"), RelationType("IsA"), RelationType("PartOf")]),
    concepts,
    st.floats(min_value=0, max_value=10, allow_nan=False),
).filter(lambda e: e.start != e.end)


@settings(max_examples=60, deadline=None)
@given(st.lists(edge_st, max_size=15))
def test_round_trip(edges):
    text = format_edge_dump(edges)
    parsed, skipped = parse_edge_dump(io.StringIO(text))
    assert skipped == 0
    assert set(parsed) == set(edges)


@settings(max_examples=60, deadline=None)
@given(st.lists(edge_st, max_size=15))
def test_neighbors_symmetric(edges):
    src = EdgeSource(edges)
    for e in set(edges):
        assert neighbors(src, e.start).count(e) == 1
        assert neighbors(src, e.end).count(e) == 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), max_size=14))
def test_taxonomy_accepts_dags_rejects_cycles(pairs):
    lines = [f"n{c}\tn{p}" for c, p in pairs]
    # a taxonomy built only from child > parent index pairs is acyclic
    acyclic = all(c > p for c, p in pairs)
    if acyclic:
        parse_taxonomy(lines)
        return
    # otherwise decide cyclicity independently by repeated leaf stripping
    edges = {(c, p) for c, p in pairs}
    nodes = {x for e in edges for x in e}
    while True:
        sinks = {n for n in nodes if not any(c == n for c, _ in edges)}
        if not sinks:
            break
        nodes -= sinks
        edges = {(c, p) for c, p in edges if c in nodes and p in nodes}
    if nodes:
        with pytest.raises(CycleDetected):
            parse_taxonomy(lines)
    else:
        parse_taxonomy(lines)
