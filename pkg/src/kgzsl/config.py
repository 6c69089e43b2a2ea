"""Run configuration: one YAML (or JSON) file plus ``--set key=value`` overrides."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from typing import Any, Iterable, Mapping

import yaml

from .errors import ConfigError

DEFAULTS: dict[str, Any] = {
    "seed": None,
    "paths": {
        "cn_edges": None,
        "wn_edges": None,
        "taxonomy": None,
        "seeds": None,
        "classes": None,
        "node_features": None,
        "targets": None,
        "features": None,
        "unrelated": None,
    },
    "graph": {
        "source": "CN",
        "max_hops": 2,
        "rule": "all",  # all | th | weight | wup | ancestor
        "wn_th_rule": "wup",
        "weight_threshold": 1.0,
        "wup_threshold": 0.5,
        "wup_compare": "frontier",
        "allowed_roots": [],
        "anchor_roots": True,
        "strict": False,
        "parse_mode": "strict",
        "lang": "en",
    },
    "gnn": {
        "architecture": "trgcn",
        "hidden": [32],
        "input_dim": 32,
        "num_bases": None,
        "lstm_hidden": None,
        "proj_dim": None,
        "leaky_alpha": 0.2,
        "normalize_output": True,
        "activate_output": False,
    },
    "train": {"epochs": 1000, "val_fraction": 0.05, "optimizer": "adam", "lr": 1e-3, "momentum": 0.9},
    "finetune": {"epochs": 50, "lr": 1e-4, "momentum": 0.9, "batch_size": 16},
    "eval": {"class_averaged": False},
    "baseline": "none",  # none | RN | UN
    "ablate": {
        "architectures": ["gcn", "rgcn", "lstm", "trgcn"],
        "sources": ["CN", "WN", "CN+WN"],
        "hops": [2, 3],
        "policies": ["all", "th"],
        "baselines": ["none", "RN", "UN"],
        "workers": 1,
    },
}

PATH_KEYS = tuple(DEFAULTS["paths"])


def _merge(base: dict, over: Mapping, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ConfigError(f"unknown config key {prefix}{k}")
        if isinstance(out[k], dict):
            if not isinstance(v, Mapping):
                raise ConfigError(f"config key {prefix}{k} must be a mapping")
            out[k] = _merge(out[k], v, prefix=f"{prefix}{k}.")
        else:
            out[k] = v
    return out


def apply_override(cfg: dict, assignment: str) -> None:
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key=value: {assignment!r}")
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config section in {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = yaml.safe_load(raw) if raw.strip() else None


def load_config(path: str | None, overrides: Iterable[str] = (), base_dir: str | None = None) -> dict:
    """Defaults < file < overrides. Relative paths resolve against the file's directory."""
    raw: dict = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid config {path}: {e}") from None
        base_dir = base_dir or os.path.dirname(os.path.abspath(path))
    cfg = _merge(DEFAULTS, raw)
    for o in overrides:
        apply_override(cfg, o)
    base_dir = base_dir or os.getcwd()
    for k in PATH_KEYS:
        v = cfg["paths"][k]
        if v is not None and not os.path.isabs(v):
            cfg["paths"][k] = os.path.normpath(os.path.join(base_dir, v))
    if cfg["paths"]["classes"] is None:
        cfg["paths"]["classes"] = cfg["paths"]["seeds"]
    return cfg


def validate(cfg: dict, needs: Iterable[str] = ()) -> None:
    if cfg.get("seed") is None:
        raise ConfigError("config must set a seed")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    for k in needs:
        p = cfg["paths"].get(k)
        if p is None:
            raise ConfigError(f"config needs paths.{k}")
        if not os.path.exists(p):
            raise ConfigError(f"paths.{k} does not exist: {p}")
    for k in PATH_KEYS:
        p = cfg["paths"][k]
        if p is not None and not os.path.exists(p):
            raise ConfigError(f"paths.{k} does not exist: {p}")


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()
