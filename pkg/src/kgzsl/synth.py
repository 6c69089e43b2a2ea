"""Seeded synthetic worlds for end-to-end runs.

Every class (state seeds and anchor classes) is a bag of attribute concepts;
its true vector is the normalized sum of its attributes' latent vectors. In the
graph a class node only links to its attributes and to a few noise nodes, and
its own input feature is random, so its vector can only be recovered by
aggregating neighbors. Unseen states share attributes with seen states and
anchors, which is what lets graph information transfer to them.

Image features are noisy linear images of the true class vectors.

Two sources are written: a common-sense style edge dump (attribute edges
heavy, noise edges light) and a lexicographic dump with a taxonomy
(entity > quality > attribute > class, entity > artifact > noise).
"""

from __future__ import annotations

import itertools
import os
from dataclasses import asdict, dataclass

import numpy as np
import yaml

from .numerics.matrix import format_keyed, row_normalize
from .numerics.rng import derive_seed, seeded_rng


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    n_seen: int = 5
    n_unseen: int = 3
    n_anchors: int = 40
    n_attributes: int = 6
    n_noise: int = 24
    attrs_per_class: int = 2
    noise_per_class: int = 2
    dim: int = 32
    node_dim: int = 32
    feature_dim: int = 32
    n_train: int = 200
    n_val: int = 50
    n_test: int = 200
    feature_noise: float = 0.3
    target_noise: float = 0.05


@dataclass
class SynthWorld:
    spec: SynthSpec
    seen: list[str]
    unseen: list[str]
    anchors: list[str]
    attributes: list[str]
    noise: list[str]
    class_attrs: dict[str, list[str]]
    truth: dict[str, np.ndarray]
    targets: dict[str, np.ndarray]
    node_features: dict[str, np.ndarray]
    cn_edges: list[tuple[str, str, str, float]]
    wn_edges: list[tuple[str, str, str, float]]
    taxonomy: list[tuple[str, str]]
    items: list[tuple[str, str, str, np.ndarray]]
    unrelated: dict[str, str]


def _rng(spec: SynthSpec, tag: str) -> np.random.Generator:
    return seeded_rng(derive_seed(spec.seed, tag))


def generate(spec: SynthSpec) -> SynthWorld:
    seen = [f"state_s{i:02d}" for i in range(spec.n_seen)]
    unseen = [f"state_u{i:02d}" for i in range(spec.n_unseen)]
    anchors = [f"anchor_{i:03d}" for i in range(spec.n_anchors)]
    attributes = [f"attr_{i:02d}" for i in range(spec.n_attributes)]
    noise = [f"noise_{i:02d}" for i in range(spec.n_noise)]
    classes = seen + unseen + anchors

    rng = _rng(spec, "structure")
    class_attrs: dict[str, list[str]] = {}
    for c in classes:
        picks = rng.choice(spec.n_attributes, size=spec.attrs_per_class, replace=False)
        class_attrs[c] = [attributes[i] for i in sorted(picks)]
    # states get pairwise distinct attribute sets; every attribute of an unseen
    # state also occurs on some seen state
    combos = list(itertools.combinations(attributes, spec.attrs_per_class))
    for c, k in zip(seen, rng.choice(len(combos), size=spec.n_seen, replace=False)):
        class_attrs[c] = list(combos[k])
    seen_attrs = sorted({a for c in seen for a in class_attrs[c]})
    taken = {tuple(class_attrs[c]) for c in seen}
    pool = [t for t in itertools.combinations(seen_attrs, spec.attrs_per_class) if t not in taken]
    if len(pool) < spec.n_unseen:
        raise ValueError("too few attributes for distinct unseen states")
    for c, k in zip(unseen, rng.choice(len(pool), size=spec.n_unseen, replace=False)):
        class_attrs[c] = list(pool[k])

    lat = _rng(spec, "latent")
    attr_vec = dict(zip(attributes, row_normalize(lat.standard_normal((spec.n_attributes, spec.dim)))[0]))
    truth = {}
    for c in classes:
        truth[c] = row_normalize(sum(attr_vec[a] for a in class_attrs[c])[None, :])[0][0]
    targets = {}
    for a in anchors:
        t = truth[a] + spec.target_noise * lat.standard_normal(spec.dim)
        targets[a] = t / np.linalg.norm(t)

    feat_rng = _rng(spec, "node-features")
    mix = np.linalg.qr(feat_rng.standard_normal((spec.node_dim, spec.node_dim)))[0][:, : spec.dim] \
        if spec.node_dim >= spec.dim else feat_rng.standard_normal((spec.node_dim, spec.dim)) / np.sqrt(spec.dim)
    node_features: dict[str, np.ndarray] = {}
    for a in attributes:
        v = mix @ attr_vec[a] + 0.1 * feat_rng.standard_normal(spec.node_dim) / np.sqrt(spec.node_dim)
        node_features[a] = v
    for n in classes + noise + ["entity", "quality", "artifact"]:
        node_features[n] = feat_rng.standard_normal(spec.node_dim) / np.sqrt(spec.node_dim)

    erng = _rng(spec, "edges")
    cn_edges: list[tuple[str, str, str, float]] = []
    wn_edges: list[tuple[str, str, str, float]] = []
    taxonomy: list[tuple[str, str]] = [("quality", "entity"), ("artifact", "entity")]
    taxonomy += [(a, "quality") for a in attributes]
    taxonomy += [(n, "artifact") for n in noise]
    for c in classes:
        attrs = class_attrs[c]
        for a in attrs:
            cn_edges.append((c, "HasProperty", a, round(float(erng.uniform(1.5, 3.0)), 3)))
        taxonomy.append((c, attrs[0]))
        for a in attrs[1:]:
            wn_edges.append((c, "Attribute", a, 1.0))
        for j in erng.choice(spec.n_noise, size=spec.noise_per_class, replace=False):
            cn_edges.append((c, "RelatedTo", noise[j], round(float(erng.uniform(0.1, 0.8)), 3)))
        wn_edges.append((c, "SimilarTo", noise[int(erng.integers(spec.n_noise))], 1.0))
    for n in noise:
        a = attributes[int(erng.integers(spec.n_attributes))]
        cn_edges.append((n, "RelatedTo", a, round(float(erng.uniform(0.1, 0.8)), 3)))
        m = noise[int(erng.integers(spec.n_noise))]
        if m != n:
            cn_edges.append((n, "AtLocation", m, round(float(erng.uniform(0.1, 0.8)), 3)))
    wn_edges += [(child, "Hypernym", parent, 1.0) for child, parent in taxonomy]

    drng = _rng(spec, "dataset")
    proj = drng.standard_normal((spec.feature_dim, spec.dim)) / np.sqrt(spec.dim)

    def sample(label: str) -> np.ndarray:
        return proj @ truth[label] + spec.feature_noise * drng.standard_normal(spec.feature_dim) \
            / np.sqrt(spec.feature_dim) * np.sqrt(spec.dim / spec.feature_dim)

    items = []
    for split, n, pool in (("train", spec.n_train, seen), ("val", spec.n_val, seen),
                           ("test", spec.n_test, seen + unseen)):
        for k in range(n):
            label = pool[k % len(pool)]
            items.append((f"{split}_{k:04d}", split, label, sample(label)))

    urng = _rng(spec, "unrelated")
    unrelated = {}
    used: set[str] = set()
    for c in seen + unseen:
        pool = [a for a in anchors if a not in used and not set(class_attrs[a]) & set(class_attrs[c])]
        pool = pool or [a for a in anchors if a not in used]
        pick = pool[int(urng.integers(len(pool)))]
        used.add(pick)
        unrelated[c] = pick

    return SynthWorld(spec, seen, unseen, anchors, attributes, noise, class_attrs, truth,
                      targets, node_features, cn_edges, wn_edges, taxonomy, items, unrelated)


FILES = {
    "cn_edges": "cn_edges.tsv",
    "wn_edges": "wn_edges.tsv",
    "taxonomy": "wn_taxonomy.tsv",
    "seeds": "seeds.tsv",
    "classes": "seeds.tsv",
    "node_features": "node_features.tsv",
    "targets": "targets.tsv",
    "features": "features.tsv",
    "unrelated": "unrelated.tsv",
}


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _edges_text(edges) -> str:
    return "".join(f"{s}\t{r}\t{e}\t{w!r}\n" for s, r, e, w in edges)


def default_config(spec: SynthSpec) -> dict:
    return {
        "seed": spec.seed,
        "paths": dict(FILES),
        "graph": {"source": "CN", "max_hops": 2, "rule": "all", "anchor_roots": True},
        "gnn": {"architecture": "trgcn", "hidden": [spec.dim]},
        "train": {"epochs": 300, "val_fraction": 0.2},
        "finetune": {"epochs": 50, "lr": 0.01, "momentum": 0.9, "batch_size": 16},
    }


def write_world(world: SynthWorld, out_dir: str) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    p = {k: os.path.join(out_dir, v) for k, v in FILES.items()}
    _write(p["cn_edges"], "# synthetic common-sense dump\n" + _edges_text(world.cn_edges))
    _write(p["wn_edges"], "# synthetic lexicographic dump\n" + _edges_text(world.wn_edges))
    _write(p["taxonomy"], "".join(f"{c}\t{q}\n" for c, q in world.taxonomy))
    _write(p["seeds"], "".join(f"{c}\tseen\n" for c in world.seen)
           + "".join(f"{c}\tunseen\n" for c in world.unseen))
    names = sorted(world.node_features)
    _write(p["node_features"], format_keyed(names, np.vstack([world.node_features[n] for n in names])))
    _write(p["targets"], format_keyed(world.anchors, np.vstack([world.targets[a] for a in world.anchors])))
    lines = [f"dim {world.spec.feature_dim}"]
    lines += [f"{i}\t{s}\t{lab}\t" + " ".join(repr(float(v)) for v in f) for i, s, lab, f in world.items]
    _write(p["features"], "\n".join(lines) + "\n")
    _write(p["unrelated"], "".join(f"{c}\t{a}\n" for c, a in world.unrelated.items()))
    truth_names = world.seen + world.unseen + world.anchors
    _write(os.path.join(out_dir, "truth.tsv"),
           format_keyed(truth_names, np.vstack([world.truth[n] for n in truth_names])))
    _write(os.path.join(out_dir, "synth.yaml"), yaml.safe_dump(asdict(world.spec), sort_keys=True))
    _write(os.path.join(out_dir, "config.yaml"),
           yaml.safe_dump(default_config(world.spec), sort_keys=True))
    return p
