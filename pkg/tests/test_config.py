import os

import pytest

from kgzsl.config import apply_override, config_digest, load_config, validate
from kgzsl.errors import ConfigError
from kgzsl.pipeline import GridPoint, grid_points, policies_for


@pytest.fixture
def cfg_file(tmp_path):
    (tmp_path / "seeds.tsv").write_text("a\tseen\n")
    p = tmp_path / "cfg.yaml"
    p.write_text("seed: 4\npaths:\n  seeds: seeds.tsv\ngnn:\n  architecture: gcn\n")
    return p


def test_layering_and_relative_paths(cfg_file, tmp_path):
    cfg = load_config(str(cfg_file), ["gnn.hidden=[8, 4]", "train.lr=0.5", "graph.source=WN"])
    assert cfg["seed"] == 4 and cfg["gnn"]["architecture"] == "gcn"
    assert cfg["gnn"]["hidden"] == [8, 4] and cfg["train"]["lr"] == 0.5
    assert cfg["paths"]["seeds"] == os.path.join(str(tmp_path), "seeds.tsv")
    assert cfg["paths"]["classes"] == cfg["paths"]["seeds"]
    assert cfg["train"]["epochs"] == 1000
    validate(cfg, needs=["seeds"])


def test_unknown_keys_rejected(cfg_file, tmp_path):
    with pytest.raises(ConfigError, match="gnn.depth"):
        load_config(str(cfg_file), ["gnn.depth=3"])
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 1\ngraph:\n  hopz: 2\n")
    with pytest.raises(ConfigError, match="graph.hopz"):
        load_config(str(bad))
    with pytest.raises(ConfigError):
        apply_override({}, "no-equals-sign")
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.yaml"))


def test_validation(cfg_file):
    with pytest.raises(ConfigError, match="seed"):
        validate(load_config(None))
    with pytest.raises(ConfigError, match="targets"):
        validate(load_config(str(cfg_file)), needs=["targets"])
    with pytest.raises(ConfigError, match="does not exist"):
        validate(load_config(str(cfg_file), ["paths.taxonomy=/nonexistent/tax.tsv"]))


def test_digest_is_stable(cfg_file):
    a, b = load_config(str(cfg_file)), load_config(str(cfg_file))
    assert config_digest(a) == config_digest(b)
    assert config_digest(a) != config_digest(load_config(str(cfg_file), ["seed=5"]))


def test_threshold_policy_per_source(cfg_file):
    cfg = load_config(str(cfg_file), ["graph.rule=th", "graph.source=CN+WN"])
    rules = {name: p.rule for name, p in policies_for(cfg).items()}
    assert rules == {"CN": "weight", "WN": "wup"}


def test_grid_feasibility(cfg_file, tmp_path):
    (tmp_path / "cn.tsv").write_text("a\tR\tb\t1.0\n")
    (tmp_path / "wn.tsv").write_text("a\tR\tb\t1.0\n")
    cfg = load_config(str(cfg_file), ["paths.cn_edges=cn.tsv", "paths.wn_edges=wn.tsv",
                                      "ablate.architectures=[trgcn]"])
    points = grid_points(cfg)
    names = [p.name for p in points]
    assert len(names) == len(set(names))
    # no taxonomy: thresholding over the lexicographic source is infeasible
    assert not any(p.source != "CN" and p.policy == "th" for p in points if p.baseline == "none")
    assert [p for p in points if p.baseline == "RN"] == [GridPoint("trgcn", "CN", 2, "all", "RN")]
    assert {p.source for p in points if p.baseline == "UN"} == {"CN"}
    assert "RN_Tr-GCN" in names and "CN_H3_UN_Tr-GCN" in names and "CN_H2_TH_Tr-GCN" in names
    assert grid_points(cfg) == points
