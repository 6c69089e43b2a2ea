"""Seeded bounded-hop knowledge-graph construction.

A graph is grown breadth-first from the state-class seeds (plus optional anchor
roots), admitting a neighbor only if it passes the node-inclusion rule. Once a
node is admitted, every source edge between two admitted nodes is kept.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import (
    DataError,
    EmptySeedSet,
    NoCommonSubsumer,
    SeedConflict,
    UnknownConcept,
    UnknownMappingTarget,
    UnresolvableSeed,
)
from .kg_ingest import Category, EdgeSource, RelationType, SourceEdge, Taxonomy, normalize_concept

log = logging.getLogger(__name__)

SEEN, UNSEEN = "seen", "unseen"
RULES = ("all", "weight", "wup", "ancestor")
SOURCES = ("CN", "WN", "CN+WN")


@dataclass(frozen=True)
class BuildPolicy:
    max_hops: int = 2
    rule: str = "all"
    weight_threshold: float = 1.0
    wup_threshold: float = 0.5
    allowed_roots: frozenset[str] = frozenset()
    source: str = "CN"
    wup_compare: str = "frontier"  # or "seed"

    def __post_init__(self):
        if self.max_hops < 0:
            raise DataError("max_hops must be >= 0")
        if self.rule not in RULES:
            raise DataError(f"unknown inclusion rule {self.rule!r}")
        if self.weight_threshold < 0:
            raise DataError("weight threshold must be >= 0")
        if not 0 < self.wup_threshold <= 1:
            raise DataError("Wu-Palmer threshold must lie in (0, 1]")
        if self.rule == "ancestor" and not self.allowed_roots:
            raise DataError("ancestor rule needs a non-empty allowed_roots set")
        if self.source not in SOURCES:
            raise DataError(f"unknown source {self.source!r}")
        if self.wup_compare not in ("frontier", "seed"):
            raise DataError(f"unknown wup_compare {self.wup_compare!r}")

    def to_dict(self) -> dict:
        return {
            "max_hops": self.max_hops,
            "rule": self.rule,
            "weight_threshold": self.weight_threshold,
            "wup_threshold": self.wup_threshold,
            "allowed_roots": sorted(self.allowed_roots),
            "source": self.source,
            "wup_compare": self.wup_compare,
        }


# --------------------------------------------------------------------- Wu-Palmer


def _depths(t: Taxonomy) -> dict[str, int]:
    cache = getattr(t, "_depth_cache", None)
    if cache is not None:
        return cache
    depth: dict[str, int] = {}

    def visit(n: str) -> int:
        if n in depth:
            return depth[n]
        stack = [n]
        while stack:
            cur = stack[-1]
            pending = [p for p in t.parents[cur] if p not in depth]
            if pending:
                stack.extend(pending)
                continue
            stack.pop()
            ps = t.parents[cur]
            depth[cur] = 1 + min(depth[p] for p in ps) if ps else 1
        return depth[n]

    for n in t.parents:
        visit(n)
    object.__setattr__(t, "_depth_cache", depth)
    return depth


def taxonomy_depth(t: Taxonomy, concept: str) -> int:
    if concept not in t:
        raise UnknownConcept(concept)
    return _depths(t)[concept]


def wu_palmer(t: Taxonomy, a: str, b: str) -> float:
    """Wu-Palmer similarity ``2 d(lcs) / (d(a) + d(b))``, capped at 1.

    Depth counts the root as 1 and follows the shortest hypernym path. In a DAG
    a deep common subsumer can push the ratio above 1; the cap keeps the
    result in (0, 1].
    """
    for c in (a, b):
        if c not in t:
            raise UnknownConcept(c)
    if a == b:
        return 1.0
    depth = _depths(t)
    common = (t.ancestors(a) | {a}) & (t.ancestors(b) | {b})
    if not common:
        raise NoCommonSubsumer(f"{a} and {b} share no subsumer")
    lcs_depth = max(depth[c] for c in common)
    return min(1.0, 2.0 * lcs_depth / (depth[a] + depth[b]))


# ------------------------------------------------------------------ inclusion


@dataclass(frozen=True)
class RuleContext:
    frontier: str
    origin_seed: str
    taxonomy: Taxonomy | None = None


def passes(policy: BuildPolicy, edge: SourceEdge, candidate: str, ctx: RuleContext) -> bool:
    """Whether ``candidate`` (reached over ``edge``) is admitted under the policy."""
    if policy.rule == "all":
        return True
    if policy.rule == "weight":
        return edge.weight >= policy.weight_threshold
    if ctx.taxonomy is None:
        raise DataError(f"rule {policy.rule!r} needs a taxonomy")
    if policy.rule == "wup":
        ref = ctx.frontier if policy.wup_compare == "frontier" else ctx.origin_seed
        return wu_palmer(ctx.taxonomy, ref, candidate) >= policy.wup_threshold
    if candidate not in ctx.taxonomy:
        return False
    return bool(ctx.taxonomy.ancestors(candidate) & policy.allowed_roots)


# ------------------------------------------------------------------------ graph


@dataclass(frozen=True)
class KnowledgeGraph:
    nodes: tuple[str, ...] = ()
    hops: tuple[int, ...] = ()
    relations: tuple[RelationType, ...] = ()
    edges: tuple[tuple[int, int, int, float], ...] = ()
    seeds: Mapping[str, str] = field(default_factory=dict)
    lookup: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.nodes)})

    def index(self, concept: str) -> int:
        return self._index[concept]

    def __contains__(self, concept: str) -> bool:
        return concept in self._index

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def seed_classes(self, flag: str | None = None) -> list[str]:
        return sorted(c for c, f in self.seeds.items() if flag is None or f == flag)

    def embedding_node(self, concept: str) -> str:
        return self.lookup.get(concept, concept)

    def named_edges(self) -> set[tuple[str, str, RelationType, float]]:
        return {(self.nodes[s], self.nodes[d], self.relations[r], w) for s, d, r, w in self.edges}


def _canonical(
    hops: Mapping[str, int],
    edges: Iterable[tuple[str, str, RelationType, float]],
    seeds: Mapping[str, str],
    lookup: Mapping[str, str] | None = None,
) -> KnowledgeGraph:
    nodes = sorted(hops, key=lambda n: (hops[n], n))
    index = {n: i for i, n in enumerate(nodes)}
    best: dict[tuple[str, str, RelationType], float] = {}
    for s, d, r, w in edges:
        key = (s, d, r)
        best[key] = max(w, best.get(key, w))
    relations = sorted({r for _, _, r in best})
    rindex = {r: i for i, r in enumerate(relations)}
    packed = sorted((index[s], index[d], rindex[r], w) for (s, d, r), w in best.items())
    lookup = {k: v for k, v in (lookup or {}).items() if k != v}
    return KnowledgeGraph(
        tuple(nodes),
        tuple(hops[n] for n in nodes),
        tuple(relations),
        tuple(packed),
        dict(sorted(seeds.items())),
        dict(sorted(lookup.items())),
    )


def expand(
    source: EdgeSource,
    seeds: Mapping[str, str],
    policy: BuildPolicy,
    taxonomy: Taxonomy | None = None,
    extra_roots: Iterable[str] = (),
    strict: bool = False,
) -> KnowledgeGraph:
    """Breadth-first expansion of ``seeds`` (concept -> seen/unseen) over ``source``.

    ``extra_roots`` (e.g. anchor classes with target vectors) start at hop 0
    like seeds but carry no seen/unseen flag. Seeds absent from the source are
    kept as isolated nodes with a warning, or raise when ``strict``.
    """
    if not seeds:
        raise EmptySeedSet("no seed classes given")
    missing = sorted(s for s in seeds if s not in source)
    if missing:
        if strict:
            raise UnresolvableSeed(missing)
        log.warning("%d seed(s) absent from %s: %s", len(missing), source.name, ", ".join(missing))

    hops: dict[str, int] = {}
    origin: dict[str, str] = {}
    for c in sorted(set(seeds) | set(extra_roots)):
        hops[c] = 0
        origin[c] = c
    frontier = sorted(hops)
    rejected_unknown = 0
    for level in range(1, policy.max_hops + 1):
        admitted = []
        for u in frontier:
            ctx = RuleContext(frontier=u, origin_seed=origin[u], taxonomy=taxonomy)
            for e in source.neighbors(u):
                v = e.other(u)
                if v in hops:
                    continue
                try:
                    ok = passes(policy, e, v, ctx)
                except (UnknownConcept, NoCommonSubsumer):
                    rejected_unknown += 1
                    ok = False
                if ok:
                    hops[v] = level
                    origin[v] = origin[u]
                    admitted.append(v)
        frontier = sorted(admitted)
        if not frontier:
            break
    if rejected_unknown:
        log.info("%d candidate(s) rejected for lack of taxonomy support", rejected_unknown)

    kept = [
        (e.start, e.end, e.relation, e.weight)
        for e in source.edges
        if e.start in hops and e.end in hops
    ]
    return _canonical(hops, kept, seeds)


def merge(g1: KnowledgeGraph, g2: KnowledgeGraph) -> KnowledgeGraph:
    seeds = dict(g1.seeds)
    for c, flag in g2.seeds.items():
        if seeds.get(c, flag) != flag:
            raise SeedConflict(f"{c} is {seeds[c]} in one graph and {flag} in the other")
        seeds[c] = flag
    hops: dict[str, int] = {}
    for g in (g1, g2):
        for n, h in zip(g.nodes, g.hops):
            hops[n] = min(h, hops.get(n, h))
    lookup = dict(g1.lookup)
    for k, v in g2.lookup.items():
        if lookup.get(k, v) != v:
            raise SeedConflict(f"conflicting embedding lookup for {k}")
        lookup[k] = v
    return _canonical(hops, g1.named_edges() | g2.named_edges(), seeds, lookup)


def graph_stats(g: KnowledgeGraph) -> dict:
    per_hop: dict[int, int] = {}
    for h in g.hops:
        per_hop[h] = per_hop.get(h, 0) + 1
    return {
        "nodes": g.num_nodes,
        "edges": len(g.edges),
        "relation_types": len(g.relations),
        "per_hop": dict(sorted(per_hop.items())),
    }


def remap_state_nodes(g: KnowledgeGraph, mapping: Mapping[str, str]) -> KnowledgeGraph:
    """Redirect the embedding lookup of seed classes to other graph nodes."""
    lookup = dict(g.lookup)
    for seed, target in mapping.items():
        if target not in g:
            raise UnknownMappingTarget(target)
        if seed not in g.seeds:
            raise UnknownMappingTarget(f"{seed} is not a seed class")
        lookup[seed] = target
    return _canonical(dict(zip(g.nodes, g.hops)), g.named_edges(), g.seeds, lookup)


def build(
    sources: Mapping[str, EdgeSource],
    seeds: Mapping[str, str],
    policies: Mapping[str, BuildPolicy],
    taxonomy: Taxonomy | None = None,
    extra_roots: Iterable[str] = (),
    strict: bool = False,
) -> KnowledgeGraph:
    """Expand each named source under its own policy and merge the results."""
    graphs = [
        expand(sources[name], seeds, policies[name], taxonomy, extra_roots, strict)
        for name in sorted(sources)
    ]
    g = graphs[0]
    for other in graphs[1:]:
        g = merge(g, other)
    return g


# ------------------------------------------------------------------ file I/O

GRAPH_HEADER = "# kgzsl-graph v1"


def read_seeds(lines: Iterable[str]) -> dict[str, str]:
    seeds: dict[str, str] = {}
    for line_no, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1].strip() not in (SEEN, UNSEEN):
            raise DataError(f"seed line {line_no}: expected class<TAB>seen|unseen: {line!r}")
        name = normalize_concept(parts[0])
        flag = parts[1].strip()
        if seeds.get(name, flag) != flag:
            raise SeedConflict(f"{name} listed as both seen and unseen")
        seeds[name] = flag
    return seeds


def load_seeds(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return read_seeds(fh)


def dumps_graph(g: KnowledgeGraph) -> str:
    out = io.StringIO()
    out.write(GRAPH_HEADER + "\n")
    out.write(f"NODES {g.num_nodes}\n")
    for i, (n, h) in enumerate(zip(g.nodes, g.hops)):
        out.write(f"{i}\t{n}\t{h}\t{g.seeds.get(n, '-')}\t{g.lookup.get(n, '-')}\n")
    out.write(f"RELATIONS {len(g.relations)}\n")
    for i, r in enumerate(g.relations):
        out.write(f"{i}\t{r.label}\t{r.category.value}\n")
    out.write(f"EDGES {len(g.edges)}\n")
    for s, d, r, w in g.edges:
        out.write(f"{s}\t{d}\t{r}\t{w!r}\n")
    return out.getvalue()


def loads_graph(text: str) -> KnowledgeGraph:
    lines = text.splitlines()
    if not lines or lines[0] != GRAPH_HEADER:
        raise DataError("not a kgzsl graph file")
    pos = 1

    def section(name: str) -> list[list[str]]:
        nonlocal pos
        head = lines[pos].split()
        if len(head) != 2 or head[0] != name:
            raise DataError(f"expected section {name} at line {pos + 1}")
        count = int(head[1])
        rows = [ln.split("\t") for ln in lines[pos + 1 : pos + 1 + count]]
        pos += 1 + count
        return rows

    nodes, hops, seeds, lookup = [], [], {}, {}
    for i, (idx, name, hop, flag, target) in enumerate(section("NODES")):
        if int(idx) != i:
            raise DataError("node indices out of order")
        nodes.append(name)
        hops.append(int(hop))
        if flag != "-":
            seeds[name] = flag
        if target != "-":
            lookup[name] = target
    relations = [RelationType(label, Category(cat)) for _, label, cat in section("RELATIONS")]
    edges = []
    for s, d, r, w in section("EDGES"):
        s, d, r = int(s), int(d), int(r)
        if not (0 <= s < len(nodes) and 0 <= d < len(nodes) and 0 <= r < len(relations)):
            raise DataError("edge index out of range")
        edges.append((s, d, r, float(w)))
    return KnowledgeGraph(tuple(nodes), tuple(hops), tuple(relations), tuple(edges), seeds, lookup)


def graph_digest(g: KnowledgeGraph) -> str:
    return hashlib.sha256(dumps_graph(g).encode("utf-8")).hexdigest()


def save_graph(g: KnowledgeGraph, path, manifest: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_graph(g))
    if manifest is not None:
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_graph(path) -> KnowledgeGraph:
    with open(path, encoding="utf-8") as fh:
        return loads_graph(fh.read())


def stats_csv(g: KnowledgeGraph, header: bool = True) -> str:
    s = graph_stats(g)
    row = f"{s['nodes']},{s['edges']},{s['relation_types']}\n"
    return ("N,E,RT\n" + row) if header else row

