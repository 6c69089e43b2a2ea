"""``kgzsl`` command-line interface.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
Failures also print one JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields

from . import __version__
from . import pipeline as P
from .config import load_config
from .errors import ConfigError, DataError, KgzslError
from .graph_builder import load_graph, stats_csv
from .synth import SynthSpec, generate, write_world


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("UsageError", message, 1)
        sys.exit(1)


def _emit_error(kind: str, message: str, code: int) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="YAML run configuration")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. --set gnn.architecture=gcn")


def _add_run_dir(p: argparse.ArgumentParser) -> None:
    p.add_argument("--run-dir", "-o", required=True, help="directory holding the run artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgzsl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kgzsl {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-graph", help="expand seeds into a knowledge graph")
    _add_config(p)
    _add_run_dir(p)

    p = sub.add_parser("graph-stats", help="print node, edge and relation-type counts")
    p.add_argument("graph", help="graph.kg file or a run directory")
    p.add_argument("--no-header", action="store_true")

    p = sub.add_parser("train-embeddings", help="train the GNN and export class embeddings")
    _add_config(p)
    _add_run_dir(p)

    p = sub.add_parser("finetune", help="fit the feature adapter under the frozen class matrix")
    _add_config(p)
    _add_run_dir(p)

    p = sub.add_parser("predict", help="score a split with the fine-tuned head")
    _add_config(p)
    _add_run_dir(p)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    p = sub.add_parser("evaluate", help="bias sweep, best HM and AUC over saved scores")
    _add_run_dir(p)
    p.add_argument("--class-averaged", action="store_true")

    p = sub.add_parser("run", help="all stages in sequence")
    _add_config(p)
    _add_run_dir(p)

    p = sub.add_parser("ablate", help="run the ablation grid and write a consolidated report")
    _add_config(p)
    p.add_argument("--out", required=True, help="grid output directory")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--report-only", action="store_true",
                   help="rebuild report.csv/report.md from saved per-point metrics")

    p = sub.add_parser("synth", help="write a seeded synthetic world")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--param", action="append", default=[], metavar="NAME=VALUE",
                   help="override a generator parameter, e.g. --param n_anchors=60")
    p.add_argument("--run", action="store_true", help="also run the full pipeline into OUT/run")
    return parser


def _spec_from(seed: int, params: list[str]) -> SynthSpec:
    known = {f.name: f.type for f in fields(SynthSpec)}
    values = {"seed": seed}
    for item in params:
        name, sep, raw = item.partition("=")
        if not sep or name not in known or name == "seed":
            raise ConfigError(f"unknown synth parameter {item!r}")
        values[name] = float(raw) if known[name] in (float, "float") else int(raw)
    return SynthSpec(**values)


def _cfg(args) -> dict:
    if args.config is None and not args.set:
        raise ConfigError("this command needs --config")
    return load_config(args.config, args.set)


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "build-graph":
        g = P.stage_build_graph(_cfg(args), args.run_dir)
        sys.stdout.write(stats_csv(g))
    elif cmd == "graph-stats":
        path = args.graph
        if os.path.isdir(path):
            path = os.path.join(path, P.ARTIFACTS["graph"])
        if not os.path.exists(path):
            raise DataError(f"no graph at {path}")
        sys.stdout.write(stats_csv(load_graph(path), header=not args.no_header))
    elif cmd == "train-embeddings":
        P.stage_train(_cfg(args), args.run_dir)
    elif cmd == "finetune":
        P.stage_finetune(_cfg(args), args.run_dir)
    elif cmd == "predict":
        P.stage_predict(_cfg(args), args.run_dir, args.split)
    elif cmd == "evaluate":
        row = P.stage_evaluate(args.run_dir, args.class_averaged)
        sys.stdout.write(P.report_csv([(os.path.basename(os.path.normpath(args.run_dir)), row)]))
    elif cmd == "run":
        row = P.run_all(_cfg(args), args.run_dir)
        sys.stdout.write(P.report_csv([(os.path.basename(os.path.normpath(args.run_dir)), row)]))
    elif cmd == "ablate":
        if args.report_only:
            rows = P.report_from_saved(args.out)
        else:
            results = P.ablate(_cfg(args), args.out, args.workers)
            failed = [name for name, r in results if r["status"] != "ok"]
            for name in failed:
                logging.getLogger("kgzsl").warning("grid point %s failed", name)
            rows = [(name, r["row"]) for name, r in results if r["status"] == "ok"]
        sys.stdout.write(P.report_csv(rows))
    elif cmd == "synth":
        world = generate(_spec_from(args.seed, args.param))
        write_world(world, args.out)
        if args.run:
            cfg = load_config(os.path.join(args.out, "config.yaml"))
            row = P.run_all(cfg, os.path.join(args.out, "run"))
            sys.stdout.write(P.report_csv([("synth", row)]))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return _dispatch(args)
    except KgzslError as e:
        _emit_error(type(e).__name__, str(e), e.exit_code)
        return e.exit_code
    except OSError as e:
        _emit_error(type(e).__name__, str(e), 2)
        return 2
