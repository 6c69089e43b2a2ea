"""Regressing GNN outputs onto target classifier weights.

Anchor classes (graph nodes with a known target vector) are split into train
and validation sets. The GNN is trained full-batch to minimize the mean squared
L2 distance between its unit-normalized outputs and the unit-normalized
targets; the parameters with the lowest validation loss produce the final
embedding table.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    AnchorNotInGraph,
    DataError,
    DivergedLoss,
    MissingMappingTarget,
    TooFewAnchors,
)
from .gnn import GnnModel, GraphStructure
from .graph_builder import KnowledgeGraph, graph_digest
from .numerics import tape as T
from .numerics.matrix import format_keyed, parse_keyed, row_normalize
from .numerics.optim import Optimizer
from .numerics.rng import seeded_rng


@dataclass(frozen=True)
class TrainPlan:
    epochs: int = 1000
    val_fraction: float = 0.05
    seed: int = 0
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9

    def __post_init__(self):
        if self.epochs < 1:
            raise DataError("epochs must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise DataError("val_fraction must lie in (0, 1)")


@dataclass
class EmbeddingTable:
    classes: list[str]
    vectors: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.shape[0] != len(self.classes):
            raise DataError("embedding table rows do not match class list")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, name: str) -> bool:
        return name in self.classes

    def vector(self, name: str) -> np.ndarray:
        return self.vectors[self.classes.index(name)]

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(zip(self.classes, self.vectors))

    def restrict(self, names: Sequence[str]) -> "EmbeddingTable":
        missing = [n for n in names if n not in self.classes]
        if missing:
            raise MissingMappingTarget(", ".join(missing))
        return EmbeddingTable(list(names), np.vstack([self.vector(n) for n in names]),
                              dict(self.provenance))

    def dumps(self) -> str:
        return format_keyed(self.classes, self.vectors)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())
        with open(str(path) + ".json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.provenance, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        with open(path, encoding="utf-8") as fh:
            names, m = parse_keyed(fh)
        try:
            with open(str(path) + ".json", encoding="utf-8") as fh:
                prov = json.load(fh)
        except FileNotFoundError:
            prov = {}
        return cls(names, m, prov)


@dataclass
class TrainLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch]

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e, (tr, va) in enumerate(zip(self.train_loss, self.val_loss)):
            w.writerow([e, repr(tr), repr(va)])
        return out.getvalue()


def load_targets(table: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Unit-normalize target rows; zero or non-finite rows are rejected."""
    if not table:
        return {}
    names = list(table)
    raw = np.vstack([table[n] for n in names])
    bad = ~np.isfinite(raw).all(axis=1)
    if bad.any():
        raise DataError("non-finite target vector for " + ", ".join(np.array(names)[bad]))
    m, zero = row_normalize(raw)
    if zero.any():
        raise DataError("zero target vector for " + ", ".join(np.array(names)[zero]))
    return dict(zip(names, m))


def split_anchors(anchors: Sequence[str], val_fraction: float, seed: int):
    """Seeded shuffle-split into ``(train, val)``; both sides non-empty."""
    anchors = sorted(anchors)
    n = len(anchors)
    if n < 2:
        raise TooFewAnchors(f"need at least 2 anchors, have {n}")
    n_val = min(max(int(math.floor(n * val_fraction + 1e-9)), 1), n - 1)
    order = seeded_rng(seed).permutation(n)
    shuffled = [anchors[i] for i in order]
    return sorted(shuffled[n_val:]), sorted(shuffled[:n_val])


def select_checkpoint(val_losses: Sequence[float]) -> int:
    """Index of the first minimal validation loss."""
    return int(np.argmin(np.asarray(val_losses)))


def train_embeddings(
    g: KnowledgeGraph,
    features0: np.ndarray,
    model: GnnModel,
    targets: Mapping[str, np.ndarray],
    plan: TrainPlan,
    structure: GraphStructure | None = None,
    exclude_from_loss: Sequence[str] = (),
) -> tuple[EmbeddingTable, TrainLog, GnnModel, np.ndarray]:
    """Train ``model`` on the anchors in ``targets``.

    Returns the seed-class embedding table, the per-epoch log, the selected
    model and the full node-embedding matrix of the selected model. Log row 0
    is the untrained model, row ``e`` the model after ``e`` optimizer steps.
    ``exclude_from_loss`` drops train anchors from the loss (used to check
    that validation anchors never leak into the gradient).
    """
    missing = sorted(k for k in targets if k not in g)
    if missing:
        raise AnchorNotInGraph(", ".join(missing))
    targets = load_targets(targets)
    s = structure or GraphStructure.from_graph(g)
    train, val = split_anchors(list(targets), plan.val_fraction, plan.seed)
    train_loss_anchors = [a for a in train if a not in set(exclude_from_loss)]
    tr_idx = [g.index(a) for a in train_loss_anchors]
    va_idx = [g.index(a) for a in val]
    tr_t = np.vstack([targets[a] for a in train_loss_anchors])
    va_t = np.vstack([targets[a] for a in val])

    opt = Optimizer(plan.optimizer, lr=plan.lr, momentum=plan.momentum)
    log = TrainLog()
    names = model.names
    params = [model.params[n] for n in names]
    best_params, best_val, best_out = params, math.inf, None
    # divergence is detected below and reported as DivergedLoss
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(plan.epochs + 1):
            tape = T.Tape()
            bound = {n: tape.param(v) for n, v in zip(names, params)}
            out = model.forward(s, tape.const(features0), bound)
            loss = T.mean_squared_l2_loss(T.gather_rows(out, tr_idx), tr_t)
            val_diff = out.value[va_idx] - va_t
            val_loss = float((val_diff * val_diff).sum() / len(va_idx))
            train_loss = float(loss.value)
            if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            log.train_loss.append(train_loss)
            log.val_loss.append(val_loss)
            if val_loss < best_val:
                best_val, best_params, best_out = val_loss, params, out.value
                log.best_epoch = epoch
            if epoch == plan.epochs:
                break
            grads = tape.gradients(loss, [bound[n] for n in names])
            params = opt.step(params, grads)
            if not all(np.isfinite(p).all() for p in params):
                raise DivergedLoss(f"non-finite parameters after epoch {epoch}")

    best = model.with_params(best_params)
    node_table = row_normalize(best_out)[0]
    classes = g.seed_classes()
    rows = np.vstack([node_table[g.index(g.embedding_node(c))] for c in classes]) if classes \
        else np.zeros((0, best_out.shape[1]))
    provenance = {
        "graph_sha256": graph_digest(g),
        "model": model.config.architecture,
        "layer_dims": list(model.config.layer_dims),
        "seed": plan.seed,
        "epochs": plan.epochs,
        "best_epoch": log.best_epoch,
        "best_val_loss": repr(log.best_val_loss),
        "train_anchors": len(train),
        "val_anchors": len(val),
    }
    table = EmbeddingTable(classes, rows, provenance)
    return table, log, best, node_table


def node_embedding_table(g: KnowledgeGraph, node_table: np.ndarray) -> EmbeddingTable:
    return EmbeddingTable(list(g.nodes), node_table, {})


def baseline_embeddings(
    kind: str,
    classes: Sequence[str],
    dim: int | None = None,
    seed: int = 0,
    trained: EmbeddingTable | None = None,
    mapping: Mapping[str, str] | None = None,
) -> EmbeddingTable:
    """Ablation baselines.

    ``"random"``: seeded unit-normalized Gaussian rows of width ``dim``.
    ``"unrelated"``: each class takes the trained vector of ``mapping[class]``
    (classes absent from ``mapping`` keep their own vector).
    """
    classes = list(classes)
    if kind == "random":
        if dim is None:
            raise DataError("random baseline needs a dimension")
        m = seeded_rng(seed).standard_normal((len(classes), dim))
        return EmbeddingTable(classes, row_normalize(m)[0], {"baseline": "random", "seed": seed})
    if kind == "unrelated":
        if trained is None:
            raise DataError("unrelated baseline needs a trained table")
        mapping = dict(mapping or {})
        rows = []
        for c in classes:
            target = mapping.get(c, c)
            if target not in trained:
                raise MissingMappingTarget(target)
            rows.append(trained.vector(target))
        prov = dict(trained.provenance, baseline="unrelated", mapping=mapping)
        return EmbeddingTable(classes, np.vstack(rows), prov)
    raise DataError(f"unknown baseline {kind!r}")


def choose_unrelated(g: KnowledgeGraph, candidates: Sequence[str] | None, seed: int) -> dict[str, str]:
    """Seeded map from each seed class to a distinct non-seed node.

    Picks from ``candidates`` (typically the anchor classes) when given,
    otherwise from every non-seed node of the graph.
    """
    pool = sorted(candidates) if candidates is not None else list(g.nodes)
    pool = [n for n in pool if n in g and n not in g.seeds]
    classes = g.seed_classes()
    if len(pool) < len(classes):
        raise MissingMappingTarget("graph has too few unrelated nodes for the mapping")
    picks = seeded_rng(seed).choice(len(pool), size=len(classes), replace=False)
    return {c: pool[i] for c, i in zip(classes, picks)}
