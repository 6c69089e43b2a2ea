"""Stage orchestration shared by the CLI and the ablation grid.

Each stage reads its inputs from the config and the run directory, writes its
artifacts into the run directory and records itself in ``manifest.json``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .config import config_digest, validate
from .errors import ConfigError, DataError, KgzslError
from .evaluation import (
    MetricsRow,
    bias_sweep,
    check_bounds,
    metrics_csv,
    metrics_row,
    parse_metrics_csv,
    report_csv,
    report_markdown,
)
from .gnn import GnnConfig, GnnModel, GraphStructure, load_node_features
from .graph_builder import (
    BuildPolicy,
    KnowledgeGraph,
    build,
    load_graph,
    load_seeds,
    remap_state_nodes,
    save_graph,
)
from .kg_ingest import Category, load_edge_source, load_taxonomy, normalize_concept
from .numerics.matrix import load_keyed
from .numerics.rng import derive_seed, seeded_rng
from .trainer import (
    EmbeddingTable,
    TrainPlan,
    baseline_embeddings,
    choose_unrelated,
    node_embedding_table,
    train_embeddings,
)
from .zsl_head import (
    ClassifierHead,
    assemble_head,
    finetune_adapter,
    format_class_manifest,
    format_scores,
    load_dataset,
    parse_scores,
    predict_scores,
)

log = logging.getLogger(__name__)

ARTIFACTS = {
    "graph": "graph.kg",
    "embeddings": "embeddings.tsv",
    "node_embeddings": "node_embeddings.tsv",
    "model": "model.gnn",
    "log": "log.csv",
    "head": "head.txt",
    "finetune_log": "finetune_log.csv",
    "scores": "scores.tsv",
    "classes": "classes.tsv",
    "curve": "curve.tsv",
    "metrics": "metrics.csv",
    "metrics_md": "metrics.md",
    "manifest": "manifest.json",
}


def _path(run_dir: str, key: str) -> str:
    return os.path.join(run_dir, ARTIFACTS[key])


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _manifest_key(run_dir: str, path: str) -> str:
    """Run-directory inputs are keyed relative to it so a run can be moved."""
    rel = os.path.relpath(os.path.abspath(path), os.path.abspath(run_dir))
    return path if rel.startswith(os.pardir) else rel


def record_manifest(run_dir: str, command: str, cfg: dict | None, inputs, outputs, started: float):
    """Add one command record to the run directory's manifest."""
    path = _path(run_dir, "manifest")
    manifest = {"tool": "kgzsl", "version": __version__, "commands": {}}
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    manifest["commands"][command] = {
        "config_sha256": config_digest(cfg) if cfg is not None else None,
        "seed": cfg.get("seed") if cfg is not None else None,
        "inputs": {_manifest_key(run_dir, p): file_digest(p)
                   for p in sorted(set(inputs)) if p and os.path.exists(p)},
        "outputs": sorted(os.path.basename(o) for o in outputs),
        "wall_clock_s": round(time.time() - started, 3),
    }
    if cfg is not None:
        manifest["commands"][command]["config"] = cfg
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- graph


def policies_for(cfg: dict) -> dict[str, BuildPolicy]:
    gc = cfg["graph"]
    names = {"CN": ["CN"], "WN": ["WN"], "CN+WN": ["CN", "WN"]}.get(gc["source"])
    if names is None:
        raise ConfigError(f"unknown graph.source {gc['source']!r}")
    out = {}
    for name in names:
        rule = gc["rule"]
        if rule == "th":
            rule = "weight" if name == "CN" else gc["wn_th_rule"]
        out[name] = BuildPolicy(
            max_hops=int(gc["max_hops"]),
            rule=rule,
            weight_threshold=float(gc["weight_threshold"]),
            wup_threshold=float(gc["wup_threshold"]),
            allowed_roots=frozenset(normalize_concept(r) for r in gc["allowed_roots"]),
            source=gc["source"],
            wup_compare=gc["wup_compare"],
        )
    return out


def anchor_names(cfg: dict) -> list[str]:
    p = cfg["paths"]["targets"]
    return sorted(load_keyed(p)) if p else []


def build_graph(cfg: dict) -> tuple[KnowledgeGraph, dict]:
    validate(cfg, needs=["seeds"])
    policies = policies_for(cfg)
    gc = cfg["graph"]
    sources, digests, skipped = {}, {}, {}
    for name in policies:
        key = "cn_edges" if name == "CN" else "wn_edges"
        path = cfg["paths"][key]
        if path is None:
            raise ConfigError(f"graph.source {gc['source']} needs paths.{key}")
        cat = Category.COMMON_SENSE if name == "CN" else Category.LEXICOGRAPHIC
        sources[name], skipped[name] = load_edge_source(path, gc["parse_mode"], cat, gc["lang"])
        digests[path] = file_digest(path)
    taxonomy = None
    if cfg["paths"]["taxonomy"]:
        taxonomy = load_taxonomy(cfg["paths"]["taxonomy"])
        digests[cfg["paths"]["taxonomy"]] = file_digest(cfg["paths"]["taxonomy"])
    if any(p.rule in ("wup", "ancestor") for p in policies.values()) and taxonomy is None:
        raise ConfigError("Wu-Palmer and ancestor rules need paths.taxonomy")
    seeds = load_seeds(cfg["paths"]["seeds"])
    roots = anchor_names(cfg) if gc["anchor_roots"] else []
    g = build(sources, seeds, policies, taxonomy, roots, strict=gc["strict"])
    manifest = {
        "policies": {k: v.to_dict() for k, v in policies.items()},
        "source_sha256": digests,
        "skipped_lines": skipped,
        "seeds": sorted(seeds.items()),
        "anchor_roots": len(roots),
    }
    return g, manifest


def stage_build_graph(cfg: dict, run_dir: str) -> KnowledgeGraph:
    started = time.time()
    os.makedirs(run_dir, exist_ok=True)
    g, manifest = build_graph(cfg)
    save_graph(g, _path(run_dir, "graph"), manifest)
    record_manifest(run_dir, "build-graph", cfg, list(manifest["source_sha256"]) + [cfg["paths"]["seeds"]],
                    [_path(run_dir, "graph"), _path(run_dir, "graph") + ".json"], started)
    return g


# ---------------------------------------------------------------- training


def gnn_config(cfg: dict, input_dim: int, output_dim: int) -> GnnConfig:
    gc = cfg["gnn"]
    return GnnConfig(
        architecture=gc["architecture"],
        layer_dims=(input_dim, *[int(h) for h in gc["hidden"]], output_dim),
        num_bases=gc["num_bases"],
        lstm_hidden=gc["lstm_hidden"],
        proj_dim=gc["proj_dim"],
        leaky_alpha=float(gc["leaky_alpha"]),
        normalize_output=bool(gc["normalize_output"]),
        activate_output=bool(gc["activate_output"]),
        order_seed=derive_seed(cfg["seed"], "lstm-order"),
    )


@dataclass
class TrainResult:
    table: EmbeddingTable
    node_table: EmbeddingTable | None
    log_csv: str | None
    model: GnnModel | None


def train(cfg: dict, g: KnowledgeGraph) -> TrainResult:
    """Stage 2, honoring ``cfg['baseline']`` (RN skips training entirely)."""
    seed = cfg["seed"]
    baseline = cfg["baseline"]
    if baseline not in ("none", "RN", "UN"):
        raise ConfigError(f"unknown baseline {baseline!r}")
    targets = load_keyed(cfg["paths"]["targets"]) if cfg["paths"]["targets"] else {}
    if not targets:
        raise ConfigError("training needs paths.targets")
    dims = {len(v) for v in targets.values()}
    if len(dims) != 1:
        raise DataError("target vectors have inconsistent dimensions")
    out_dim = dims.pop()
    if baseline == "RN":
        table = baseline_embeddings("random", g.seed_classes(), out_dim,
                                    seed=derive_seed(seed, "random-baseline"))
        return TrainResult(table, None, None, None)

    feats = load_keyed(cfg["paths"]["node_features"]) if cfg["paths"]["node_features"] else None
    in_dim = len(next(iter(feats.values()))) if feats else int(cfg["gnn"]["input_dim"])
    X = load_node_features(g, feats, in_dim, seeded_rng(derive_seed(seed, "node-init")))
    config = gnn_config(cfg, in_dim, out_dim)
    model = GnnModel.init(config, len(g.relations), seeded_rng(derive_seed(seed, "gnn-init")))
    tc = cfg["train"]
    plan = TrainPlan(int(tc["epochs"]), float(tc["val_fraction"]), seed, tc["optimizer"],
                     float(tc["lr"]), float(tc["momentum"]))
    if baseline == "UN":
        # seeds keep their labels but read their vectors from unrelated nodes
        mapping = load_mapping(cfg["paths"]["unrelated"]) if cfg["paths"]["unrelated"] else \
            choose_unrelated(g, list(targets), derive_seed(seed, "unrelated"))
        g = remap_state_nodes(g, mapping)
    table, tlog, best, node_rows = train_embeddings(g, X, model, targets, plan,
                                                    GraphStructure.from_graph(g))
    if baseline == "UN":
        table.provenance["mapping"] = dict(g.lookup)
    return TrainResult(table, node_embedding_table(g, node_rows), tlog.to_csv(), best)


def load_mapping(path: str) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            a, _, b = line.partition("\t")
            out[normalize_concept(a)] = normalize_concept(b)
    return out


def stage_train(cfg: dict, run_dir: str) -> TrainResult:
    started = time.time()
    validate(cfg, needs=["targets"])
    g = load_graph(_path(run_dir, "graph"))
    res = train(cfg, g)
    outputs = [_path(run_dir, "embeddings")]
    res.table.provenance.setdefault("baseline", cfg["baseline"])
    res.table.save(_path(run_dir, "embeddings"))
    outputs.append(_path(run_dir, "embeddings") + ".json")
    if res.node_table is not None:
        _write(_path(run_dir, "node_embeddings"), res.node_table.dumps())
        _write(_path(run_dir, "model"), res.model.dumps())
        _write(_path(run_dir, "log"), res.log_csv)
        outputs += [_path(run_dir, k) for k in ("node_embeddings", "model", "log")]
    inputs = [_path(run_dir, "graph"), cfg["paths"]["targets"], cfg["paths"]["node_features"],
              cfg["paths"]["unrelated"]]
    record_manifest(run_dir, "train-embeddings", cfg, inputs, outputs, started)
    return res


# ----------------------------------------------------------- head + eval


def finetune(cfg: dict, table: EmbeddingTable):
    ds = load_dataset(cfg["paths"]["features"], cfg["paths"]["classes"])
    fc = cfg["finetune"]
    head = assemble_head(table, ds, seed=derive_seed(cfg["seed"], "adapter-init"))
    head, flog = finetune_adapter(head, ds, epochs=int(fc["epochs"]), lr=float(fc["lr"]),
                                  momentum=float(fc["momentum"]), batch_size=int(fc["batch_size"]),
                                  seed=derive_seed(cfg["seed"], "finetune"))
    return head, flog, ds


def stage_finetune(cfg: dict, run_dir: str) -> ClassifierHead:
    started = time.time()
    validate(cfg, needs=["features", "classes"])
    table = EmbeddingTable.load(_path(run_dir, "embeddings"))
    head, flog, _ = finetune(cfg, table)
    _write(_path(run_dir, "head"), head.dumps())
    _write(_path(run_dir, "finetune_log"), flog.to_csv())
    record_manifest(run_dir, "finetune", cfg,
                    [_path(run_dir, "embeddings"), cfg["paths"]["features"], cfg["paths"]["classes"]],
                    [_path(run_dir, "head"), _path(run_dir, "finetune_log")], started)
    return head


def stage_predict(cfg: dict, run_dir: str, split: str = "test") -> np.ndarray:
    started = time.time()
    validate(cfg, needs=["features", "classes"])
    with open(_path(run_dir, "head"), encoding="utf-8") as fh:
        head = ClassifierHead.loads(fh.read())
    ds = load_dataset(cfg["paths"]["features"], cfg["paths"]["classes"])
    ids, labels, X = ds.select(split)
    scores = predict_scores(head, X)
    _write(_path(run_dir, "scores"), format_scores(ids, labels, scores))
    _write(_path(run_dir, "classes"), format_class_manifest(head))
    record_manifest(run_dir, "predict", cfg,
                    [_path(run_dir, "head"), cfg["paths"]["features"]],
                    [_path(run_dir, "scores"), _path(run_dir, "classes")], started)
    return scores


def read_score_dump(run_dir: str):
    with open(_path(run_dir, "classes"), encoding="utf-8") as fh:
        manifest = [ln.rstrip("\n").split("\t") for ln in fh if ln.strip()]
    classes = [c for c, _ in manifest]
    unseen = np.array([f == "unseen" for _, f in manifest])
    with open(_path(run_dir, "scores"), encoding="utf-8") as fh:
        _, labels, scores = parse_scores(fh)
    if scores.shape[1] != len(classes):
        raise DataError("score width does not match the class manifest")
    y = np.array([classes.index(lab) for lab in labels], dtype=np.int64)
    return scores, y, unseen


def stage_evaluate(run_dir: str, class_averaged: bool = False, cfg: dict | None = None) -> MetricsRow:
    started = time.time()
    scores, y, unseen = read_score_dump(run_dir)
    curve = bias_sweep(scores, y, unseen, class_averaged)
    row = metrics_row(curve)
    problems = check_bounds(row)
    if problems:
        raise DataError("metric bounds violated: " + "; ".join(problems))
    _write(_path(run_dir, "curve"), curve.to_tsv())
    _write(_path(run_dir, "metrics"), metrics_csv(row))
    _write(_path(run_dir, "metrics_md"), report_markdown([(os.path.basename(run_dir.rstrip("/")), row)]))
    record_manifest(run_dir, "evaluate", cfg,
                    [_path(run_dir, "scores"), _path(run_dir, "classes")],
                    [_path(run_dir, k) for k in ("curve", "metrics", "metrics_md")], started)
    return row


def run_all(cfg: dict, run_dir: str) -> MetricsRow:
    stage_build_graph(cfg, run_dir)
    stage_train(cfg, run_dir)
    stage_finetune(cfg, run_dir)
    stage_predict(cfg, run_dir)
    return stage_evaluate(run_dir, bool(cfg["eval"]["class_averaged"]), cfg)


def run_in_memory(cfg: dict, g: KnowledgeGraph | None = None) -> dict:
    """Whole pipeline without touching disk (beyond reading inputs)."""
    if g is None:
        g, _ = build_graph(cfg)
    res = train(cfg, g)
    head, _, ds = finetune(cfg, res.table)
    _, labels, X = ds.select("test")
    scores = predict_scores(head, X)
    y = np.array([head.class_index(c) for c in labels])
    curve = bias_sweep(scores, y, ~head.seen_mask, bool(cfg["eval"]["class_averaged"]))
    return {"graph": g, "train": res, "head": head, "curve": curve, "metrics": metrics_row(curve)}


# ---------------------------------------------------------------- ablation

ARCH_NAMES = {"gcn": "GCN", "rgcn": "R-GCN", "lstm": "LSTM", "trgcn": "Tr-GCN"}


@dataclass(frozen=True)
class GridPoint:
    architecture: str
    source: str
    hops: int
    policy: str
    baseline: str

    @property
    def name(self) -> str:
        arch = ARCH_NAMES[self.architecture]
        if self.baseline == "RN":
            return f"RN_{arch}"
        parts = [self.source, f"H{self.hops}"]
        if self.policy == "th":
            parts.append("TH")
        if self.baseline == "UN":
            parts.append("UN")
        return "_".join(parts + [arch])

    @property
    def dirname(self) -> str:
        return self.name.replace("+", "p")


def grid_points(cfg: dict) -> list[GridPoint]:
    """Cross product of the ablation axes minus infeasible or redundant combos."""
    ac = cfg["ablate"]
    paths = cfg["paths"]
    available = {"CN": bool(paths["cn_edges"]), "WN": bool(paths["wn_edges"])}
    available["CN+WN"] = available["CN"] and available["WN"]
    has_taxonomy = bool(paths["taxonomy"])
    sources = [s for s in ac["sources"] if available.get(s)]
    hops = sorted(int(h) for h in ac["hops"])
    out = []
    for arch in ac["architectures"]:
        if arch not in ARCH_NAMES:
            raise ConfigError(f"unknown architecture {arch!r} in ablate.architectures")
        for baseline in ac["baselines"]:
            for source in sources:
                for h in hops:
                    for policy in ac["policies"]:
                        p = GridPoint(arch, source, h, policy, baseline)
                        if policy == "th" and source != "CN" and cfg["graph"]["wn_th_rule"] in (
                            "wup", "ancestor") and not has_taxonomy:
                            continue
                        if baseline == "RN" and (source, h, policy) != (sources[0], hops[0], ac["policies"][0]):
                            continue
                        if baseline == "UN" and source != "CN":
                            continue
                        out.append(p)
    return out


def point_config(cfg: dict, p: GridPoint) -> dict:
    c = copy.deepcopy(cfg)
    c["gnn"]["architecture"] = p.architecture
    c["graph"]["source"] = p.source
    c["graph"]["max_hops"] = p.hops
    c["graph"]["rule"] = p.policy
    c["baseline"] = p.baseline
    return c


def _run_point(args) -> tuple[str, dict]:
    cfg, p, out_dir = args
    run_dir = os.path.join(out_dir, p.dirname)
    try:
        row = run_all(point_config(cfg, p), run_dir)
        return p.name, {"status": "ok", "row": row}
    except KgzslError as e:
        log.error("grid point %s failed: %s", p.name, e)
        return p.name, {"status": "error", "error": f"{type(e).__name__}: {e}"}


def ablate(cfg: dict, out_dir: str, workers: int | None = None) -> list[tuple[str, dict]]:
    os.makedirs(out_dir, exist_ok=True)
    points = grid_points(cfg)
    jobs = [(cfg, p, out_dir) for p in points]
    workers = int(workers or cfg["ablate"]["workers"] or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]
    write_grid_report(out_dir, points, results)
    return results


def write_grid_report(out_dir: str, points, results) -> None:
    rows = [(name, r["row"]) for name, r in results if r["status"] == "ok"]
    _write(os.path.join(out_dir, "report.csv"), report_csv(rows))
    _write(os.path.join(out_dir, "report.md"), report_markdown(rows))
    lines = ["name,dir,status,error"]
    for p, (name, r) in zip(points, results):
        err = r.get("error", "").replace(",", ";").replace("\n", " ")
        lines.append(f"{name},{p.dirname},{r['status']},{err}")
    _write(os.path.join(out_dir, "points.csv"), "\n".join(lines) + "\n")


def report_from_saved(out_dir: str) -> list[tuple[str, MetricsRow]]:
    """Rebuild the grid report from each point's saved metrics.csv."""
    with open(os.path.join(out_dir, "points.csv"), encoding="utf-8") as fh:
        entries = [ln.rstrip("\n").split(",") for ln in fh.readlines()[1:] if ln.strip()]
    rows = []
    for name, dirname, status, *_ in entries:
        if status != "ok":
            continue
        with open(os.path.join(out_dir, dirname, ARTIFACTS["metrics"]), encoding="utf-8") as fh:
            rows.append((name, parse_metrics_csv(fh.read())))
    _write(os.path.join(out_dir, "report.csv"), report_csv(rows))
    _write(os.path.join(out_dir, "report.md"), report_markdown(rows))
    return rows
