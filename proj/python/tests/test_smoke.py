import json
import os
import subprocess

import pydot
import pytest

import tfnas

QUICK = {
    "space": {"layers": 1, "hidden": 8, "heads": 2, "ff_dim": 16, "key_dim": 4, "value_dim": 4},
    "task": {"kind": "classification", "vocab": 8, "seq_len": 6, "train_size": 128, "dev_size": 32},
    "hyperparams": {"algorithm": "sdo", "steps": 20, "batch": 8, "eval_every": 10, "seed": 5},
}


def parse_dot(text):
    graphs = pydot.graph_from_dot_data(text)
    assert graphs and len(graphs) == 1
    return graphs[0]


def test_schema_and_defaults():
    assert tfnas.SCHEMA_VERSION == 1
    cfg = tfnas.default_config()
    assert cfg["schema_version"] == 1
    assert cfg["hyperparams"]["algorithm"] == "sdo"
    h = tfnas.config_hash(cfg)
    assert len(h) == 16 and h == tfnas.config_hash(json.dumps(cfg))


def test_bad_config_raises():
    with pytest.raises(tfnas.ConfigError):
        tfnas.config_hash({"hyperparams": {"no_such_key": 1}})
    with pytest.raises(ValueError):
        tfnas.config_hash("{broken")


def test_profiles_and_costs():
    p = tfnas.profile("table1")
    assert p["schema_version"] == 1
    assert p["aggregated"]["Feedforward"] > 0
    costs = tfnas.slot_costs(QUICK["space"])
    base = sum(s["cost"] for s in costs["slots"] if not s["id"].endswith("conn"))
    assert costs["fixed"] >= 0
    assert base > 0


def test_baseline_description_and_dot():
    arch = tfnas.baseline_arch(QUICK["space"])
    desc = tfnas.describe(QUICK["space"], arch)
    assert desc["speedup"] == pytest.approx(1.0)
    assert desc["blocks"][0]["ff_layers"] == [16]
    assert all(h["key_dim"] == 4 for h in desc["blocks"][0]["heads"])
    g = parse_dot(tfnas.export_dot(desc))
    assert g.get_name() == "architecture"
    names = {n.get_name() for n in g.get_nodes()}
    assert {"input", "output"} <= names
    assert any(s.get_name() == "cluster_block0" for s in g.get_subgraphs())


def test_invalid_arch_raises():
    arch = tfnas.baseline_arch(QUICK["space"])
    for s in arch["slots"]:
        s["value"] = 0
    with pytest.raises(tfnas.ArchitectureError):
        tfnas.describe(QUICK["space"], arch)


def test_search_is_deterministic():
    seen = []
    a = tfnas.search(QUICK, on_metric=seen.append)
    b = tfnas.search(QUICK)
    assert a == b
    assert len(a["metrics"]) == 20 and seen == a["metrics"]
    assert a["description"]["provenance"]["seed"] == 5
    assert 0 <= a["metric"] <= 1
    parse_dot(tfnas.export_dot(a["description"]))


def test_ramp_weight():
    assert tfnas.ramp_weight(80) == 0
    assert tfnas.ramp_weight(90) == 0.5
    assert tfnas.ramp_weight(100) == 1


def test_property_suite():
    assert "estimator" in tfnas.property_suites()
    results = tfnas.run_property_suite("connector")
    assert results and all(r["passed"] for r in results)


@pytest.mark.skipif("TFNAS_CLI" not in os.environ, reason="command-line tool path not given")
def test_cli_outputs_parse(tmp_path):
    cli = os.environ["TFNAS_CLI"]
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(QUICK))
    out = tmp_path / "run"
    subprocess.run([cli, "search", "-c", str(cfg), "-o", str(out)], check=True, capture_output=True)
    parse_dot((out / "arch.dot").read_text())
    desc = json.loads((out / "arch.json").read_text())
    assert desc["provenance"]["config_hash"] == tfnas.config_hash(QUICK)
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 20 and json.loads(lines[0])["seed"] == 5
    r = subprocess.run([cli, "export", "-i", str(out / "checkpoint.json")], check=True, capture_output=True,
                       text=True)
    parse_dot(r.stdout)
    bad = subprocess.run([cli, "search", "--no-such-flag"], capture_output=True, text=True)
    assert bad.returncode == 1 and "Usage" in bad.stderr
