"""Graph neural network bodies: GCN, R-GCN, LSTM aggregator and Tr-GCN.

All four are written against the autodiff tape so that the same code serves
inference and training. Per-node set operations (attention, recurrent
aggregation) are vectorized over the graph with gather/segment primitives
instead of Python loops over nodes.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError, ShapeMismatch
from .graph_builder import KnowledgeGraph
from .numerics import tape as T
from .numerics.matrix import format_matrix, parse_matrix
from .numerics.rng import glorot_init, seeded_rng

log = logging.getLogger(__name__)

ARCHITECTURES = ("gcn", "rgcn", "lstm", "trgcn")


@dataclass(frozen=True)
class GnnConfig:
    architecture: str = "trgcn"
    layer_dims: tuple[int, ...] = (32, 32, 32)
    num_bases: int | None = None
    lstm_hidden: int | None = None
    proj_dim: int | None = None
    leaky_alpha: float = 0.2
    normalize_output: bool = True
    activate_output: bool = False
    order_seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise DataError(f"unknown architecture {self.architecture!r}")
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise DataError("layer_dims needs an input and at least one output dimension")

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]


@dataclass
class GraphStructure:
    """Index arrays derived once from a graph and reused by every forward pass."""

    num_nodes: int
    edges: np.ndarray  # (E, 3) src, dst, relation
    num_relations: int
    neighbors: list[np.ndarray] = field(repr=False)
    a_hat: sp.csr_matrix = field(repr=False)
    relation_mats: list[tuple[int, sp.csr_matrix]] = field(repr=False)
    # Tr-GCN set bookkeeping
    mem_node: np.ndarray = field(repr=False)
    mem_set: np.ndarray = field(repr=False)
    set_size: np.ndarray = field(repr=False)
    pair_row: np.ndarray = field(repr=False)
    pair_q: np.ndarray = field(repr=False)
    pair_k: np.ndarray = field(repr=False)

    @classmethod
    def from_graph(cls, g: KnowledgeGraph) -> "GraphStructure":
        return cls.from_edges(g.num_nodes, [(s, d, r) for s, d, r, _ in g.edges], len(g.relations))

    @classmethod
    def from_edges(cls, n: int, edges: Sequence[tuple[int, int, int]], num_relations: int):
        e = np.array(list(edges), dtype=np.int64).reshape(-1, 3)
        if e.size and (e[:, :2].min() < 0 or e[:, :2].max() >= n or e[:, 2].max() >= num_relations):
            raise ShapeMismatch("edge index out of range")
        nbr_sets: list[set[int]] = [set() for _ in range(n)]
        for s, d, _ in e:
            if s != d:
                nbr_sets[s].add(int(d))
                nbr_sets[d].add(int(s))
        neighbors = [np.array(sorted(ns), dtype=np.int64) for ns in nbr_sets]

        a_hat = normalize_adjacency_from(n, neighbors)

        # relation r: dst <- src ; relation r + R: src <- dst
        relation_mats = []
        for r in range(2 * num_relations):
            base = r % num_relations if num_relations else 0
            sel = e[e[:, 2] == base] if e.size else e
            if not len(sel):
                continue
            tgt, src = (sel[:, 1], sel[:, 0]) if r < num_relations else (sel[:, 0], sel[:, 1])
            counts = np.bincount(tgt, minlength=n).astype(float)
            vals = 1.0 / counts[tgt]
            relation_mats.append((r, sp.csr_matrix((vals, (tgt, src)), shape=(n, n))))

        members = [np.concatenate(([i], nb)) for i, nb in enumerate(neighbors)]
        members = [np.unique(m) for m in members]
        set_size = np.array([len(m) for m in members], dtype=np.int64)
        mem_node = np.concatenate(members) if n else np.zeros(0, dtype=np.int64)
        mem_set = np.repeat(np.arange(n), set_size)
        offsets = np.concatenate(([0], np.cumsum(set_size)[:-1])) if n else np.zeros(0, np.int64)
        pair_row, pair_q, pair_k = [], [], []
        for i, m in enumerate(members):
            k = len(m)
            rows = offsets[i] + np.repeat(np.arange(k), k)
            pair_row.append(rows)
            pair_q.append(np.repeat(m, k))
            pair_k.append(np.tile(m, k))
        cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0, dtype=np.int64)  # noqa: E731
        return cls(
            n, e, num_relations, neighbors, a_hat, relation_mats,
            mem_node, mem_set, set_size, cat(pair_row), cat(pair_q), cat(pair_k),
        )


def normalize_adjacency_from(n: int, neighbors: Sequence[np.ndarray]) -> sp.csr_matrix:
    rows = np.concatenate([np.arange(n)] + [np.full(len(nb), i) for i, nb in enumerate(neighbors)])
    cols = np.concatenate([np.arange(n)] + list(neighbors)) if n else np.zeros(0, np.int64)
    deg = np.array([len(nb) + 1 for nb in neighbors], dtype=float)
    dinv = 1.0 / np.sqrt(deg)
    vals = dinv[rows] * dinv[cols]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def normalize_adjacency(g: KnowledgeGraph) -> sp.csr_matrix:
    """Symmetric-normalized adjacency with self loops, D^-1/2 (A + I) D^-1/2."""
    return GraphStructure.from_graph(g).a_hat


# ---------------------------------------------------------------- parameters


def _directed_relations(num_relations: int) -> int:
    return 2 * num_relations


def default_num_bases(config: GnnConfig, num_relations: int) -> int:
    return config.num_bases if config.num_bases is not None else min(num_relations, 8)


def uses_bases(config: GnnConfig, num_relations: int) -> bool:
    b = default_num_bases(config, num_relations)
    return 0 < b < _directed_relations(num_relations)


def init_params(config: GnnConfig, num_relations: int, rng: np.random.Generator) -> dict:
    params: dict[str, np.ndarray] = {}
    dims = config.layer_dims
    for l in range(config.num_layers):
        din, dout = dims[l], dims[l + 1]
        arch = config.architecture
        if arch == "gcn":
            params[f"W{l}"] = glorot_init(din, dout, rng)
        elif arch == "rgcn":
            params[f"self{l}"] = glorot_init(din, dout, rng)
            nrel = _directed_relations(num_relations)
            if nrel == 0:
                continue
            if uses_bases(config, num_relations):
                nb = default_num_bases(config, num_relations)
                params[f"bases{l}"] = np.vstack(
                    [glorot_init(din, dout, rng).reshape(1, -1) for _ in range(nb)]
                )
                params[f"coef{l}"] = glorot_init(nrel, nb, rng)
            else:
                params[f"rel{l}"] = np.vstack(
                    [glorot_init(din, dout, rng).reshape(1, -1) for _ in range(nrel)]
                )
        elif arch == "lstm":
            h = config.lstm_hidden or dout
            params[f"Wx{l}"] = glorot_init(din, 4 * h, rng)
            params[f"Wh{l}"] = glorot_init(h, 4 * h, rng)
            params[f"b{l}"] = np.zeros((1, 4 * h))
            params[f"out{l}"] = glorot_init(din + h, dout, rng)
            params[f"outb{l}"] = np.zeros((1, dout))
        else:
            p = config.proj_dim or dout
            params[f"mlp1_{l}"] = glorot_init(din, p, rng)
            params[f"mlp1b_{l}"] = np.zeros((1, p))
            params[f"mlp2_{l}"] = glorot_init(p, p, rng)
            params[f"mlp2b_{l}"] = np.zeros((1, p))
            params[f"query{l}"] = glorot_init(p, p, rng)
            params[f"key{l}"] = glorot_init(p, p, rng)
            params[f"out{l}"] = glorot_init(din + p, dout, rng)
            params[f"outb{l}"] = np.zeros((1, dout))
    return params


# ------------------------------------------------------------------- layers


def gcn_layer(s: GraphStructure, H: T.Var, W: T.Var) -> T.Var:
    return T.spmm(s.a_hat, T.matmul(H, W))


def rgcn_layer(s: GraphStructure, H: T.Var, p: Mapping[str, T.Var], l: int) -> T.Var:
    W0 = p[f"self{l}"]
    out = T.matmul(H, W0)
    din, dout = W0.shape
    if f"bases{l}" in p:
        stacked = T.matmul(p[f"coef{l}"], p[f"bases{l}"])
    elif f"rel{l}" in p:
        stacked = p[f"rel{l}"]
    else:
        return out
    for r, C in s.relation_mats:
        Wr = T.take_row_as_matrix(stacked, r, (din, dout))
        out = T.add(out, T.matmul(T.spmm(C, H), Wr))
    return out


def lstm_orders(s: GraphStructure, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Seeded neighbor orderings as (steps, N) index and mask arrays."""
    steps = max((len(nb) for nb in s.neighbors), default=0)
    idx = np.zeros((steps, s.num_nodes), dtype=np.int64)
    mask = np.zeros((steps, s.num_nodes))
    for i, nb in enumerate(s.neighbors):
        order = nb[rng.permutation(len(nb))] if len(nb) else nb
        idx[: len(order), i] = order
        mask[: len(order), i] = 1.0
    return idx, mask


def lstm_aggregate(
    H: T.Var, Wx: T.Var, Wh: T.Var, b: T.Var, idx: np.ndarray, mask: np.ndarray
) -> T.Var:
    tape = H.tape
    n = H.shape[0]
    hdim = Wh.shape[0]
    h = tape.const(np.zeros((n, hdim)))
    c = tape.const(np.zeros((n, hdim)))
    for t in range(idx.shape[0]):
        m = mask[t][:, None]
        keep = 1.0 - m
        x = T.gather_rows(H, idx[t])
        gates = T.add(T.add(T.matmul(x, Wx), T.matmul(h, Wh)), b)
        i_g = T.sigmoid(T.slice_cols(gates, 0, hdim))
        f_g = T.sigmoid(T.slice_cols(gates, hdim, 2 * hdim))
        g_g = T.tanh(T.slice_cols(gates, 2 * hdim, 3 * hdim))
        o_g = T.sigmoid(T.slice_cols(gates, 3 * hdim, 4 * hdim))
        c_new = T.add(T.mul(f_g, c), T.mul(i_g, g_g))
        h_new = T.mul(o_g, T.tanh(c_new))
        c = T.add(T.mul(c_new, m), T.mul(c, keep))
        h = T.add(T.mul(h_new, m), T.mul(h, keep))
    return h


def lstm_layer(s, H, p, l, orders) -> T.Var:
    agg = lstm_aggregate(H, p[f"Wx{l}"], p[f"Wh{l}"], p[f"b{l}"], *orders)
    return T.add(T.matmul(T.concat_cols(H, agg), p[f"out{l}"]), p[f"outb{l}"])


def set_attention_pool(
    P: T.Var, Q: T.Var, K: T.Var, s: GraphStructure
) -> T.Var:
    """Mean-pooled scaled dot-product self-attention over each node's set.

    ``P`` holds the projected node vectors (used as values), ``Q``/``K`` their
    query and key images. The set of node ``i`` is ``{i} + neighbors(i)``.
    """
    scale = 1.0 / np.sqrt(P.shape[1])
    scores = T.scale(T.rowdot(T.gather_rows(Q, s.pair_q), T.gather_rows(K, s.pair_k)), scale)
    attn = T.segment_softmax(scores, s.pair_row, len(s.mem_node))
    attended = T.segment_sum(T.mul(attn, T.gather_rows(P, s.pair_k)), s.pair_row, len(s.mem_node))
    weights = (1.0 / s.set_size[s.mem_set])[:, None]
    return T.segment_sum(T.mul(attended, weights), s.mem_set, s.num_nodes)


def trgcn_layer(s, H, p, l, alpha) -> T.Var:
    hidden = T.leaky_relu(T.add(T.matmul(H, p[f"mlp1_{l}"]), p[f"mlp1b_{l}"]), alpha)
    P = T.add(T.matmul(hidden, p[f"mlp2_{l}"]), p[f"mlp2b_{l}"])
    Q = T.matmul(P, p[f"query{l}"])
    K = T.matmul(P, p[f"key{l}"])
    pooled = set_attention_pool(P, Q, K, s)
    return T.add(T.matmul(T.concat_cols(H, pooled), p[f"out{l}"]), p[f"outb{l}"])


# -------------------------------------------------------------------- model


class GnnModel:
    def __init__(self, config: GnnConfig, params: Mapping[str, np.ndarray], num_relations: int):
        self.config = config
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.num_relations = num_relations

    @classmethod
    def init(cls, config: GnnConfig, num_relations: int, rng: np.random.Generator) -> "GnnModel":
        return cls(config, init_params(config, num_relations, rng), num_relations)

    @property
    def names(self) -> list[str]:
        return list(self.params)

    def with_params(self, values: Sequence[np.ndarray]) -> "GnnModel":
        return GnnModel(self.config, dict(zip(self.names, values)), self.num_relations)

    def bind(self, tape: T.Tape) -> dict[str, T.Var]:
        return {k: tape.param(v) for k, v in self.params.items()}

    def forward(
        self,
        s: GraphStructure,
        H: T.Var,
        params: Mapping[str, T.Var],
        rng: np.random.Generator | None = None,
    ) -> T.Var:
        cfg = self.config
        if H.shape != (s.num_nodes, cfg.layer_dims[0]):
            raise ShapeMismatch(
                f"node features {H.shape}, expected ({s.num_nodes}, {cfg.layer_dims[0]})"
            )
        if s.num_relations != self.num_relations and cfg.architecture == "rgcn":
            raise ShapeMismatch("graph relation count differs from the model's")
        orders = None
        if cfg.architecture == "lstm":
            orders = lstm_orders(s, rng if rng is not None else seeded_rng(cfg.order_seed))
        out = H
        for l in range(cfg.num_layers):
            if cfg.architecture == "gcn":
                out = gcn_layer(s, out, params[f"W{l}"])
            elif cfg.architecture == "rgcn":
                out = rgcn_layer(s, out, params, l)
            elif cfg.architecture == "lstm":
                out = lstm_layer(s, out, params, l, orders)
            else:
                out = trgcn_layer(s, out, params, l, cfg.leaky_alpha)
            last = l == cfg.num_layers - 1
            if not last or cfg.activate_output:
                out = T.leaky_relu(out, cfg.leaky_alpha)
        if cfg.normalize_output:
            out = T.row_l2_normalize(out)
        return out

    def embed(self, s: GraphStructure, X: np.ndarray, rng=None) -> np.ndarray:
        tape = T.Tape()
        return self.forward(s, tape.const(X), self.bind(tape), rng).value

    # -- checkpoint I/O

    def dumps(self) -> str:
        out = io.StringIO()
        out.write("# kgzsl-gnn v1\n")
        out.write("CONFIG " + json.dumps(asdict(self.config), sort_keys=True) + "\n")
        out.write(f"RELATIONS {self.num_relations}\n")
        for name, value in self.params.items():
            out.write(f"PARAM {name}\n")
            out.write(format_matrix(value))
        return out.getvalue()

    @classmethod
    def loads(cls, text: str) -> "GnnModel":
        lines = text.splitlines()
        if not lines or lines[0] != "# kgzsl-gnn v1":
            raise DataError("not a kgzsl model checkpoint")
        cfg = json.loads(lines[1].removeprefix("CONFIG "))
        cfg["layer_dims"] = tuple(cfg["layer_dims"])
        num_relations = int(lines[2].split()[1])
        params = {}
        pos = 3
        while pos < len(lines):
            name = lines[pos].split(" ", 1)[1]
            rows = int(lines[pos + 1].split()[1])
            params[name] = parse_matrix(lines[pos + 1 : pos + 2 + rows])
            pos += 2 + rows
        return cls(GnnConfig(**cfg), params, num_relations)


def load_node_features(
    g: KnowledgeGraph,
    table: Mapping[str, np.ndarray] | None,
    dim: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Initial node features; concepts missing from ``table`` get Glorot rows."""
    fallback = glorot_init(g.num_nodes, dim, rng)
    if not table:
        return fallback
    dims = {len(v) for v in table.values()}
    if dims != {dim}:
        raise ShapeMismatch(f"node-feature file has dims {sorted(dims)}, expected {dim}")
    X = fallback.copy()
    missing = 0
    for i, n in enumerate(g.nodes):
        if n in table:
            X[i] = table[n]
        else:
            missing += 1
    if missing:
        log.warning("%d of %d nodes have no input feature; using seeded init", missing, g.num_nodes)
    return X


def config_with(config: GnnConfig, **changes) -> GnnConfig:
    return replace(config, **changes)
