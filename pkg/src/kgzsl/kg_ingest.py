"""Parsing of local knowledge-source dumps.

Two line formats are supported, both UTF-8 with ``#`` comment lines:

* edge dump: ``start<TAB>relation<TAB>end<TAB>weight``
* taxonomy:  ``child<TAB>parent``

Concept names are normalized (see :func:`normalize_concept`) so that ConceptNet
style URIs (``/c/en/open_bottle``) and plain class names meet in one namespace.
"""

from __future__ import annotations

import enum
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .errors import CycleDetected, EmptyConcept, MalformedLine, NegativeWeight

_LANG_PREFIX = re.compile(r"^/c/([a-z]{2,3})/")
_WS = re.compile(r"\s+")


class Category(str, enum.Enum):
    COMMON_SENSE = "CommonSense"
    LEXICOGRAPHIC = "Lexicographic"


@dataclass(frozen=True, order=True)
class RelationType:
    label: str
    category: Category = Category.COMMON_SENSE

    def __post_init__(self):
        if not self.label:
            raise ValueError("relation label must be non-empty")


@dataclass(frozen=True, order=True)
class SourceEdge:
    start: str
    relation: RelationType
    end: str
    weight: float = 1.0

    def other(self, concept: str) -> str:
        return self.end if concept == self.start else self.start


def normalize_concept(raw: str) -> str:
    """Map a raw name or ``/c/<lang>/`` URI onto a ConceptId string."""
    name = raw.strip()
    name = _LANG_PREFIX.sub("", name)
    name = _WS.sub("_", name.strip()).lower()
    if not name:
        raise EmptyConcept(f"empty concept from {raw!r}")
    return name


def concept_language(raw: str) -> str | None:
    m = _LANG_PREFIX.match(raw.strip())
    return m.group(1) if m else None


def _normalize_relation(raw: str) -> str:
    label = raw.strip()
    if label.startswith("/r/"):
        label = label[3:]
    return label


def _records(lines: Iterable[str]) -> Iterator[tuple[int, str]]:
    for line_no, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield line_no, line


def parse_edge_dump(
    lines: Iterable[str],
    mode: str = "strict",
    category: Category = Category.COMMON_SENSE,
    lang: str | None = "en",
) -> tuple[list[SourceEdge], int]:
    """Parse an edge dump into ``(edges, skipped)``.

    ``mode`` is ``"strict"`` (first bad line raises) or ``"skip"`` (bad lines
    are counted). Lines whose URIs carry a language prefix other than ``lang``
    are dropped silently; they are not malformed.
    """
    if mode not in ("strict", "skip"):
        raise ValueError(f"unknown parse mode {mode!r}")
    edges: list[SourceEdge] = []
    skipped = 0
    for line_no, line in _records(lines):
        try:
            parts = line.split("\t")
            if len(parts) != 4:
                raise MalformedLine(line_no, line, f"expected 4 fields, got {len(parts)}")
            start_raw, rel_raw, end_raw, weight_raw = parts
            if lang is not None and any(
                concept_language(r) not in (None, lang) for r in (start_raw, end_raw)
            ):
                continue
            try:
                weight = float(weight_raw)
            except ValueError:
                raise MalformedLine(line_no, line, "weight is not a number") from None
            if not math.isfinite(weight):
                raise MalformedLine(line_no, line, "weight is not finite")
            if weight < 0:
                raise NegativeWeight(line_no, line)
            label = _normalize_relation(rel_raw)
            if not label:
                raise MalformedLine(line_no, line, "empty relation")
            try:
                start, end = normalize_concept(start_raw), normalize_concept(end_raw)
            except EmptyConcept:
                raise MalformedLine(line_no, line, "empty concept") from None
            if start == end:
                raise MalformedLine(line_no, line, "self-loop")
            edges.append(SourceEdge(start, RelationType(label, category), end, weight))
        except MalformedLine:
            if mode == "strict":
                raise
            skipped += 1
    return edges, skipped


def format_edge_dump(edges: Iterable[SourceEdge]) -> str:
    return "".join(f"{e.start}\t{e.relation.label}\t{e.end}\t{e.weight!r}\n" for e in edges)


@dataclass(frozen=True)
class Taxonomy:
    entries: frozenset[tuple[str, str]] = frozenset()
    parents: dict[str, tuple[str, ...]] = field(default_factory=dict, compare=False)
    roots: frozenset[str] = frozenset()

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[str, str]]) -> "Taxonomy":
        entries = frozenset(entries)
        parents: dict[str, set[str]] = defaultdict(set)
        nodes: set[str] = set()
        for child, parent in entries:
            parents[child].add(parent)
            nodes.update((child, parent))
        cycle = _find_cycle(parents)
        if cycle:
            raise CycleDetected(cycle)
        roots = frozenset(n for n in nodes if n not in parents)
        frozen = {n: tuple(sorted(parents.get(n, ()))) for n in sorted(nodes)}
        return cls(entries, frozen, roots)

    @property
    def nodes(self) -> frozenset[str]:
        return frozenset(self.parents)

    def __contains__(self, concept: str) -> bool:
        return concept in self.parents

    def ancestors(self, concept: str) -> set[str]:
        """Proper ancestors (transitive parents) of ``concept``."""
        seen: set[str] = set()
        stack = list(self.parents.get(concept, ()))
        while stack:
            p = stack.pop()
            if p not in seen:
                seen.add(p)
                stack.extend(self.parents[p])
        return seen


def _find_cycle(parents: dict[str, set[str]]) -> list[str] | None:
    WHITE, GREY, BLACK = 0, 1, 2
    color: dict[str, int] = defaultdict(int)
    for root in sorted(parents):
        if color[root] != WHITE:
            continue
        path = [root]
        color[root] = GREY
        iters = [iter(sorted(parents.get(root, ())))]
        while iters:
            nxt = next(iters[-1], None)
            if nxt is None:
                color[path.pop()] = BLACK
                iters.pop()
            elif color[nxt] == GREY:
                return path[path.index(nxt):] + [nxt]
            elif color[nxt] == WHITE:
                color[nxt] = GREY
                path.append(nxt)
                iters.append(iter(sorted(parents.get(nxt, ()))))
    return None


def parse_taxonomy(lines: Iterable[str]) -> Taxonomy:
    entries = []
    for line_no, line in _records(lines):
        parts = line.split("\t")
        if len(parts) != 2:
            raise MalformedLine(line_no, line, f"expected 2 fields, got {len(parts)}")
        try:
            child, parent = normalize_concept(parts[0]), normalize_concept(parts[1])
        except EmptyConcept:
            raise MalformedLine(line_no, line, "empty concept") from None
        if child == parent:
            raise CycleDetected([child, child])
        entries.append((child, parent))
    return Taxonomy.from_entries(entries)


class EdgeSource:
    """Immutable endpoint-indexed collection of source edges."""

    def __init__(self, edges: Iterable[SourceEdge], name: str = "source"):
        self.name = name
        self.edges = tuple(sorted(set(edges)))
        index: dict[str, list[SourceEdge]] = defaultdict(list)
        for e in self.edges:
            index[e.start].append(e)
            index[e.end].append(e)
        self._index = {
            c: tuple(sorted(es, key=lambda e: (e.relation, e.other(c), e.start, e.weight)))
            for c, es in index.items()
        }

    def __contains__(self, concept: str) -> bool:
        return concept in self._index

    def __len__(self) -> int:
        return len(self.edges)

    @property
    def concepts(self) -> list[str]:
        return sorted(self._index)

    @property
    def relations(self) -> list[RelationType]:
        return sorted({e.relation for e in self.edges})

    def neighbors(self, concept: str) -> list[SourceEdge]:
        return list(self._index.get(concept, ()))


def neighbors(source: EdgeSource, concept: str) -> list[SourceEdge]:
    """Every edge touching ``concept``, sorted by (relation, other endpoint)."""
    return source.neighbors(concept)


def load_edge_source(path, mode="strict", category=Category.COMMON_SENSE, lang="en"):
    with open(path, encoding="utf-8") as fh:
        edges, skipped = parse_edge_dump(fh, mode=mode, category=category, lang=lang)
    return EdgeSource(edges, name=str(path)), skipped


def load_taxonomy(path) -> Taxonomy:
    with open(path, encoding="utf-8") as fh:
        return parse_taxonomy(fh)
