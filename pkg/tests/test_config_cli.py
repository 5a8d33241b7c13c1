import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from simgraph.cli import main
from simgraph.config import (
    ExperimentConfig,
    config_from_dict,
    load_config,
    preset,
    presets,
    save_config,
)
from simgraph.data import load_dataset, load_ivecs
from simgraph.errors import ConfigError
from simgraph.graph import load_graph, validate


def tiny_config(tmp_path, **trainer_overrides) -> Path:
    cfg = {
        "name": "tiny",
        "seed": 13,
        "out_dir": str(tmp_path / "out"),
        "dataset": {
            "kind": "synthetic",
            "n_clusters": 4,
            "per_cluster": 6,
            "dim": 8,
            "spread": 0.3,
            "n_train": 40,
            "n_val": 16,
            "n_test": 16,
        },
        "graph": {"kind": "complete"},
        "search": {"k": 1, "ef_search": 1},
        "reward": {"dcs_max": 60},
        "trainer": {
            "epochs": 3,
            "batch_size": 16,
            "hidden": 8,
            "eval_every": 2,
            "lr": 1e-3,
            **trainer_overrides,
        },
    }
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


class TestConfig:
    def test_yaml_roundtrip_lossless(self, tmp_path):
        cfg = preset("toy-complete")
        path = tmp_path / "cfg.yaml"
        save_config(cfg, path)
        back = load_config(path)
        assert back == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            config_from_dict({"nope": 1})

    def test_cross_field_validation(self):
        with pytest.raises(ConfigError, match="ef_construction"):
            config_from_dict({"graph": {"kind": "nsw", "m": 8, "ef_construction": 4}})
        with pytest.raises(ConfigError, match="ef_search"):
            config_from_dict({"search": {"k": 4, "ef_search": 2}})
        with pytest.raises(ConfigError, match="dcs_max"):
            config_from_dict({"reward": {"dcs_max": 0}})

    def test_presets_all_valid(self):
        for name, cfg in presets().items():
            cfg.validate()
            assert cfg.name == name

    def test_benchmark_presets_record_table_values(self):
        sift = preset("sift100k-nsw")
        assert sift.graph.m == 12
        assert sift.search.ef_search == 10
        assert sift.reward.dcs_max == 1200
        assert sift.trainer.entropy_coef == 0.01
        nsg = preset("sift100k-nsg")
        assert nsg.graph.nsg_r == 24 and nsg.graph.nsg_k == 200
        assert nsg.reward.dcs_max == 1500
        assert nsg.trainer.entropy_coef == 0.001
        glove = preset("glove1m-nsw")
        assert glove.graph.m == 20 and glove.graph.ef_construction == 2000
        assert glove.search.ef_search == 5


class TestCliExitCodes:
    def test_usage_error_is_1(self):
        assert main(["definitely-not-a-command"]) == 1
        assert main(["train"]) == 1  # neither --config nor --preset

    def test_data_error_is_2(self, tmp_path):
        missing = tmp_path / "missing.yaml"
        assert main(["build", "--config", str(missing)]) == 2

    def test_bad_config_is_2(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("graph: {kind: nsw, m: 9, ef_construction: 2}\n")
        assert main(["build", "--config", str(path)]) == 2

    def test_validate_bad_graph_is_2(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"garbage")
        assert main(["validate", "--graph", str(path)]) == 2


class TestCliFlows:
    def test_prepare_writes_manifest_and_exact_gt(self, tmp_path):
        cfg_path = tiny_config(tmp_path)
        assert main(["prepare", "--config", str(cfg_path)]) == 0
        manifest = tmp_path / "out" / "dataset" / "manifest.json"
        assert manifest.exists()
        ds = load_dataset(manifest)
        from simgraph.data import brute_force_gt

        np.testing.assert_array_equal(ds.gt["test"], brute_force_gt(ds.base, ds.test_q))
        raw = load_ivecs(manifest.parent / "test_gt.ivecs")
        np.testing.assert_array_equal(raw.reshape(-1), ds.gt["test"])

    def test_build_complete_graph(self, tmp_path):
        cfg_path = tiny_config(tmp_path)
        assert main(["build", "--config", str(cfg_path)]) == 0
        out = tmp_path / "out"
        g = load_graph(out / "graph.bin")
        validate(g)
        assert g.n_edges == 24 * 23
        assert (out / "degree_hist.csv").exists()
        assert (out / "degree_hist.png").exists()
        assert main(["validate", "--graph", str(out / "graph.bin")]) == 0

    def test_train_writes_outputs(self, tmp_path):
        cfg_path = tiny_config(tmp_path)
        assert main(["train", "--config", str(cfg_path)]) == 0
        out = tmp_path / "out"
        for name in (
            "refined.bin",
            "initial.bin",
            "training_log.csv",
            "training_curves.png",
            "policy.ckpt",
            "train_summary.json",
        ):
            assert (out / name).exists(), name
        log_lines = (out / "training_log.csv").read_text().strip().splitlines()
        assert len(log_lines) == 1 + 3  # header + one row per epoch
        summary = json.loads((out / "train_summary.json").read_text())
        assert summary["initial_edges"] >= summary["refined_edges"]

    def test_zero_epochs_returns_initial_graph(self, tmp_path):
        cfg_path = tiny_config(tmp_path, epochs=0)
        assert main(["train", "--config", str(cfg_path)]) == 0
        out = tmp_path / "out"
        initial = load_graph(out / "initial.bin")
        refined = load_graph(out / "refined.bin")
        assert np.array_equal(initial.neighbors, refined.neighbors)
        assert np.array_equal(initial.offsets, refined.offsets)

    def test_sweep_and_hubs(self, tmp_path):
        cfg_path = tiny_config(tmp_path)
        assert main(["build", "--config", str(cfg_path)]) == 0
        out = tmp_path / "out"
        graph_path = str(out / "graph.bin")
        assert main([
            "sweep", "--config", str(cfg_path), "--graph", graph_path,
            "--graph", graph_path, "--efs", "1,2,4",
        ]) == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert lines[0] == "graph,ef,mean_dcs,recall_at_1"
        assert len(lines) == 1 + 6  # two labels x three efs
        assert (out / "sweep.png").exists()
        # recall non-decreasing with ef for the all-keep agent
        rows = [line.split(",") for line in lines[1:4]]
        recalls = [float(r[3]) for r in sorted(rows, key=lambda r: float(r[2]))]
        assert recalls == sorted(recalls)

        assert main([
            "hubs", "--config", str(cfg_path), "--graph", graph_path, "--top-n", "5",
        ]) == 0
        hub_lines = (out / "hubs.csv").read_text().strip().splitlines()
        assert len(hub_lines) == 1 + 5
        first = hub_lines[1].split(",")
        assert first[-1] == "1"  # start vertex listed first unconditionally
        assert (out / "hubs.png").exists()

    def test_hubs_top1_is_start_row(self, tmp_path):
        cfg_path = tiny_config(tmp_path)
        assert main(["build", "--config", str(cfg_path)]) == 0
        out = tmp_path / "out"
        assert main([
            "hubs", "--config", str(cfg_path), "--graph", str(out / "graph.bin"),
            "--top-n", "1",
        ]) == 0
        lines = (out / "hubs.csv").read_text().strip().splitlines()
        assert len(lines) == 2
        assert lines[1].split(",")[-1] == "1"

    def test_prune_flow(self, tmp_path):
        cfg_path = tiny_config(tmp_path)
        assert main(["build", "--config", str(cfg_path)]) == 0
        out = tmp_path / "out"
        assert main([
            "prune", "--config", str(cfg_path), "--graph", str(out / "graph.bin"),
        ]) == 0
        pruned = load_graph(out / "pruned.bin")
        validate(pruned)
        assert (out / "edge_weights.csv").exists()

    def test_preset_listing(self, capsys):
        assert main(["presets"]) == 0
        out = capsys.readouterr().out
        assert "toy-complete" in out and "sift100k-nsw" in out
