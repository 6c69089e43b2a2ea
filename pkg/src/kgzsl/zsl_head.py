"""Frozen-head zero-shot classifier over precomputed image features.

The class matrix is the embedding table (seen block then unseen block, each
sorted) and never changes. Only an affine adapter from feature space into the
embedding space is trained, on seen-class examples, with cross-entropy over
the seen-class logits.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DataError,
    DimMismatch,
    EmptyTrainSplit,
    MissingClassEmbedding,
    UnseenLabelInTrain,
)
from .graph_builder import SEEN, UNSEEN, read_seeds
from .kg_ingest import normalize_concept
from .numerics import tape as T
from .numerics.matrix import format_matrix, parse_matrix
from .numerics.optim import sgd_momentum_step
from .numerics.rng import glorot_init, seeded_rng
from .trainer import EmbeddingTable

SPLITS = ("train", "val", "test")


@dataclass
class FeatureDataset:
    ids: list[str]
    splits: list[str]
    labels: list[str]
    features: np.ndarray
    seen: list[str]
    unseen: list[str]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.seen, self.unseen = sorted(self.seen), sorted(self.unseen)
        if set(self.seen) & set(self.unseen):
            raise DataError("seen and unseen class sets overlap")
        n = len(self.ids)
        if not (len(self.splits) == len(self.labels) == self.features.shape[0] == n):
            raise DataError("dataset columns have different lengths")
        if self.features.ndim != 2:
            raise DimMismatch("features must be a 2-D array")
        known = set(self.seen) | set(self.unseen)
        for i, (sp, lab) in enumerate(zip(self.splits, self.labels)):
            if sp not in SPLITS:
                raise DataError(f"item {self.ids[i]}: unknown split {sp!r}")
            if lab not in known:
                raise DataError(f"item {self.ids[i]}: label {lab!r} not in the class partition")
            if sp == "train" and lab not in self.seen:
                raise UnseenLabelInTrain(f"item {self.ids[i]} ({sp}) has unseen label {lab}")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> list[str]:
        return self.seen + self.unseen

    def select(self, split: str) -> tuple[list[str], list[str], np.ndarray]:
        idx = [i for i, s in enumerate(self.splits) if s == split]
        return [self.ids[i] for i in idx], [self.labels[i] for i in idx], self.features[idx]


def read_features(lines: Iterable[str], partition: dict[str, str]) -> FeatureDataset:
    it = (ln.rstrip("\r\n") for ln in lines)
    it = (ln for ln in it if ln.strip() and not ln.startswith("#"))
    header = next(it, "").split()
    if len(header) != 2 or header[0] != "dim":
        raise DataError("feature file must start with 'dim F'")
    dim = int(header[1])
    ids, splits, labels, rows = [], [], [], []
    for ln in it:
        parts = ln.split("\t")
        if len(parts) != 4:
            raise DataError(f"feature line needs 4 tab-separated fields: {ln[:60]!r}")
        vec = [float(v) for v in parts[3].split()]
        if len(vec) != dim:
            raise DimMismatch(f"item {parts[0]}: {len(vec)} values, expected {dim}")
        ids.append(parts[0])
        splits.append(parts[1])
        labels.append(normalize_concept(parts[2]))
        rows.append(vec)
    feats = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    seen = [c for c, f in partition.items() if f == SEEN]
    unseen = [c for c, f in partition.items() if f == UNSEEN]
    return FeatureDataset(ids, splits, labels, feats, seen, unseen)


def load_dataset(features_path, classes_path) -> FeatureDataset:
    with open(classes_path, encoding="utf-8") as fh:
        partition = read_seeds(fh)
    with open(features_path, encoding="utf-8") as fh:
        return read_features(fh, partition)


def format_features(ds: FeatureDataset) -> str:
    lines = [f"dim {ds.dim}"]
    for i, sp, lab, f in zip(ds.ids, ds.splits, ds.labels, ds.features):
        lines.append(f"{i}\t{sp}\t{lab}\t" + " ".join(repr(float(v)) for v in f))
    return "\n".join(lines) + "\n"


@dataclass
class ClassifierHead:
    classes: list[str]
    num_seen: int
    class_matrix: np.ndarray
    adapter_weight: np.ndarray
    adapter_bias: np.ndarray

    def __post_init__(self):
        self.class_matrix = np.array(self.class_matrix, dtype=np.float64)
        self.class_matrix.setflags(write=False)

    @property
    def seen_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.classes), dtype=bool)
        mask[: self.num_seen] = True
        return mask

    @property
    def feature_dim(self) -> int:
        return self.adapter_weight.shape[0]

    def class_index(self, name: str) -> int:
        return self.classes.index(name)

    def dumps(self) -> str:
        out = io.StringIO()
        out.write("# kgzsl-head v1\n")
        out.write("CLASSES " + " ".join(self.classes) + "\n")
        out.write(f"SEEN {self.num_seen}\n")
        for name, m in (("W", self.class_matrix), ("A", self.adapter_weight),
                        ("b", self.adapter_bias)):
            out.write(f"MATRIX {name}\n")
            out.write(format_matrix(m))
        return out.getvalue()

    @classmethod
    def loads(cls, text: str) -> "ClassifierHead":
        lines = text.splitlines()
        if not lines or lines[0] != "# kgzsl-head v1":
            raise DataError("not a kgzsl head file")
        classes = lines[1].split()[1:]
        num_seen = int(lines[2].split()[1])
        mats, pos = {}, 3
        while pos < len(lines):
            name = lines[pos].split()[1]
            rows = int(lines[pos + 1].split()[1])
            mats[name] = parse_matrix(lines[pos + 1 : pos + 2 + rows])
            pos += 2 + rows
        return cls(classes, num_seen, mats["W"], mats["A"], mats["b"])


def class_order(seen: Sequence[str], unseen: Sequence[str]) -> list[str]:
    return sorted(seen) + sorted(unseen)


def assemble_head(table: EmbeddingTable, dataset: FeatureDataset, seed: int = 0) -> ClassifierHead:
    classes = class_order(dataset.seen, dataset.unseen)
    missing = [c for c in classes if c not in table]
    if missing:
        raise MissingClassEmbedding("no embedding for " + ", ".join(missing))
    W = np.vstack([table.vector(c) for c in classes])
    if not np.isfinite(W).all():
        raise DimMismatch("class embeddings are not finite")
    rng = seeded_rng(seed)
    A = glorot_init(dataset.dim, W.shape[1], rng)
    return ClassifierHead(classes, len(dataset.seen), W, A, np.zeros((1, W.shape[1])))


@dataclass
class FinetuneLog:
    train_loss: list[float] = field(default_factory=list)
    val_seen_acc: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_seen_acc"])
        for e, (tr, va) in enumerate(zip(self.train_loss, self.val_seen_acc), start=1):
            w.writerow([e, repr(tr), repr(va)])
        return out.getvalue()


def _labels_to_index(head: ClassifierHead, labels: Sequence[str]) -> np.ndarray:
    return np.array([head.class_index(c) for c in labels], dtype=np.int64)


def head_loss(head: ClassifierHead, X: np.ndarray, y: np.ndarray, tape: T.Tape):
    """Seen-masked cross-entropy; returns (loss, A, b, W) tape variables."""
    A = tape.param(head.adapter_weight)
    b = tape.param(head.adapter_bias)
    W = tape.param(head.class_matrix)
    z = T.add(T.matmul(tape.const(X), A), b)
    logits = T.matmul(z, _transpose(W))
    return T.cross_entropy_from_logits(logits, y, head.seen_mask), A, b, W


def _transpose(x: T.Var) -> T.Var:
    return x.tape.record(x.value.T, (x,), lambda g: (g.T,))


def finetune_adapter(
    head: ClassifierHead,
    dataset: FeatureDataset,
    epochs: int = 50,
    lr: float = 1e-4,
    momentum: float = 0.9,
    batch_size: int = 16,
    seed: int = 0,
) -> tuple[ClassifierHead, FinetuneLog]:
    """Mini-batch SGD with momentum on the adapter; the class matrix is untouched."""
    _, labels, X = dataset.select("train")
    if not labels:
        raise EmptyTrainSplit("no training items")
    if X.shape[1] != head.feature_dim:
        raise DimMismatch(f"features have dim {X.shape[1]}, adapter expects {head.feature_dim}")
    bad = [c for c in labels if c not in dataset.seen]
    if bad:
        raise UnseenLabelInTrain(", ".join(sorted(set(bad))))
    y = _labels_to_index(head, labels)
    _, val_labels, Xv = dataset.select("val")
    keep = [i for i, c in enumerate(val_labels) if c in dataset.seen]
    Xv, yv = Xv[keep], _labels_to_index(head, [val_labels[i] for i in keep])

    rng = seeded_rng(seed)
    params = [head.adapter_weight.copy(), head.adapter_bias.copy()]
    state = None
    log = FinetuneLog()
    for _ in range(epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), batch_size):
            idx = order[start : start + batch_size]
            cur = ClassifierHead(head.classes, head.num_seen, head.class_matrix, *params)
            tape = T.Tape()
            loss, A, b, _ = head_loss(cur, X[idx], y[idx], tape)
            grads = tape.gradients(loss, [A, b])
            params, state = sgd_momentum_step(params, grads, state, lr=lr, momentum=momentum)
            total += float(loss.value) * len(idx)
        log.train_loss.append(total / len(y))
        cur = ClassifierHead(head.classes, head.num_seen, head.class_matrix, *params)
        if len(yv):
            s = predict_scores(cur, Xv)[:, : head.num_seen]
            log.val_seen_acc.append(float((s.argmax(axis=1) == yv).mean()))
        else:
            log.val_seen_acc.append(float("nan"))
    return ClassifierHead(head.classes, head.num_seen, head.class_matrix, *params), log


def predict_scores(head: ClassifierHead, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != head.feature_dim:
        raise DimMismatch(f"features of shape {X.shape}, adapter expects dim {head.feature_dim}")
    return (X @ head.adapter_weight + head.adapter_bias) @ head.class_matrix.T


def predict(head: ClassifierHead, X: np.ndarray) -> np.ndarray:
    """Top-1 class indices; ties go to the lowest index in class order."""
    return predict_scores(head, X).argmax(axis=1)


def format_scores(ids: Sequence[str], labels: Sequence[str], scores: np.ndarray) -> str:
    lines = [f"{i}\t{lab}\t" + " ".join(repr(float(v)) for v in row)
             for i, lab, row in zip(ids, labels, scores)]
    return "".join(ln + "\n" for ln in lines)


def format_class_manifest(head: ClassifierHead) -> str:
    return "".join(
        f"{c}\t{SEEN if i < head.num_seen else UNSEEN}\n" for i, c in enumerate(head.classes)
    )


def parse_scores(lines: Iterable[str]) -> tuple[list[str], list[str], np.ndarray]:
    ids, labels, rows = [], [], []
    for ln in lines:
        ln = ln.rstrip("\r\n")
        if not ln or ln.startswith("#"):
            continue
        i, lab, body = ln.split("\t")
        ids.append(i)
        labels.append(lab)
        rows.append([float(v) for v in body.split()])
    width = len(rows[0]) if rows else 0
    if any(len(r) != width for r in rows):
        raise DataError("score rows have different widths")
    return ids, labels, np.array(rows, dtype=np.float64).reshape(len(rows), width)
