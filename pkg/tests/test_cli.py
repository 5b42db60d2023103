"""End-to-end subcommand runs on tiny inputs, exit codes, and manifests."""

import json
import os

import numpy as np
import pytest

from gat import manifest
from gat.cli import main
from gat.models.checkpoint import save_model
from gat.models.segmenter import Segmenter
from gat.models.spade import SpadeGenerator


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, quick_clf):
    ws = tmp_path_factory.mktemp("cli")
    save_model(ws / "clf.ckpt", quick_clf, meta={"stage": "test"})
    save_model(ws / "seg.ckpt", Segmenter(num_seg_classes=5, seed=2),
               meta={"stage": "test"})
    save_model(ws / "spade.ckpt", SpadeGenerator(num_seg_classes=5, seed=2),
               meta={"stage": "test"})
    return ws


def write_config(ws, doc, name):
    p = ws / name
    p.write_text(json.dumps(doc), encoding="utf-8")
    return str(p)


def read_manifest(out_dir, name):
    return json.loads((out_dir / f"{name}.manifest.json").read_text())


class TestManifest:
    def test_canonical_json_is_sorted_and_compact(self):
        assert manifest.canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'

    def test_config_hash_stable(self):
        assert manifest.config_hash({"x": 1}) == manifest.config_hash({"x": 1})
        assert manifest.config_hash({"x": 1}) != manifest.config_hash({"x": 2})

    def test_code_version_format(self):
        v = manifest.code_version()
        assert len(v) == 16
        int(v, 16)

    def test_resolve_out_dir_priority(self, monkeypatch):
        monkeypatch.setenv("GAT_OUT_DIR", "/tmp/envdir")
        assert str(manifest.resolve_out_dir("a", "b")) == "a"
        assert str(manifest.resolve_out_dir(None, "b")) == "b"
        assert str(manifest.resolve_out_dir(None, None)) == "/tmp/envdir"
        monkeypatch.delenv("GAT_OUT_DIR")
        assert str(manifest.resolve_out_dir(None, None)) == "."

    def test_write_manifest_creates_dirs(self, tmp_path):
        path = manifest.write_manifest(tmp_path / "deep" / "er", "x", {"a": 1})
        doc = json.loads(path.read_text())
        assert doc["a"] == 1
        assert doc["code_version"] == manifest.code_version()


class TestExitCodes:
    def test_missing_subcommand(self, capsys):
        assert main([]) == 1
        assert "config error" in capsys.readouterr().err

    def test_bad_config_value(self, workspace, capsys):
        cfg = write_config(workspace, {"attack": {"variables": "bogus"}},
                           "bad.json")
        assert main(["attack", "--config", cfg]) == 1
        assert "config error" in capsys.readouterr().err

    def test_runtime_failure_is_two(self, workspace, tmp_path, capsys):
        garbage = workspace / "garbage.ckpt"
        garbage.write_bytes(b"not a checkpoint")
        cfg = write_config(workspace, {
            "models": {"classifier": str(garbage)},
            "attack": {"n": 4, "max_iters": 1},
        }, "garbage.json")
        assert main(["attack", "--config", cfg,
                     "--out-dir", str(tmp_path)]) == 2
        assert "error" in capsys.readouterr().err


class TestDatagen:
    def test_writes_datasets_and_manifest(self, tmp_path):
        cfg_doc = {"seed": 5, "data": {"n_train": 16, "n_test": 8}}
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(cfg_doc), encoding="utf-8")
        out = tmp_path / "out"
        assert main(["datagen", "--config", str(cfg),
                     "--out-dir", str(out)]) == 0
        for name in ("train", "test", "ood"):
            assert (out / f"{name}.gatd").exists()
            assert (out / f"{name}.gatd.meta.json").exists()
        doc = read_manifest(out, "datagen")
        assert doc["command"] == "datagen"
        assert doc["sizes"] == {"train": 16, "test": 8, "ood": 8}
        assert doc["spec"]["seed"] == 5


class TestAttack:
    def test_outcomes_and_stats(self, workspace, tmp_path):
        cfg = write_config(workspace, {
            "seed": 2,
            "models": {"classifier": str(workspace / "clf.ckpt")},
            "attack": {"n": 8, "max_iters": 3, "variables": "both"},
        }, "attack.json")
        out = tmp_path / "out"
        assert main(["attack", "--config", cfg, "--out-dir", str(out)]) == 0
        doc = read_manifest(out, "attack")
        assert doc["attack_config"]["variables"] == "both"
        assert 0.0 <= doc["stats"]["fooling_rate"] <= 1.0
        lines = (out / "attack_outcomes.jsonl").read_text().strip().split("\n")
        assert len(lines) == 8

    def test_flag_overrides_beat_config(self, workspace, tmp_path):
        cfg = write_config(workspace, {
            "models": {"classifier": str(workspace / "clf.ckpt")},
            "attack": {"n": 4, "max_iters": 3, "epsilon": 0.1},
        }, "attack2.json")
        out = tmp_path / "out"
        assert main(["attack", "--config", cfg, "--out-dir", str(out),
                     "--epsilon", "0.5", "--mode", "noise",
                     "--layers", "2:3"]) == 0
        doc = read_manifest(out, "attack")
        assert doc["attack_config"]["epsilon"] == 0.5
        assert doc["attack_config"]["variables"] == "noise"
        assert doc["attack_config"]["noise_layers"] == [2, 3]

    def test_byte_identical_rerun(self, workspace, tmp_path):
        cfg = write_config(workspace, {
            "seed": 3,
            "models": {"classifier": str(workspace / "clf.ckpt")},
            "attack": {"n": 4, "max_iters": 2},
        }, "attack3.json")
        out = tmp_path / "out"
        argv = ["--threads", "1", "attack", "--config", cfg,
                "--out-dir", str(out)]
        assert main(argv) == 0
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        assert main(argv) == 0
        second = {p.name: p.read_bytes() for p in out.iterdir()}
        assert first == second


class TestInvert:
    def test_manifest_fields(self, workspace, tmp_path):
        cfg = write_config(workspace, {
            "seed": 1,
            "models": {"classifier": str(workspace / "clf.ckpt")},
            "invert": {"trials": 2, "budget": 2, "rmse_threshold": 10.0},
        }, "invert.json")
        out = tmp_path / "out"
        assert main(["invert", "--config", cfg, "--out-dir", str(out)]) == 0
        doc = read_manifest(out, "invert")
        assert doc["success_rate"] == 1.0
        assert len(doc["rmse"]) == 2


class TestSegAttack:
    def test_trajectories_recorded(self, workspace, tmp_path):
        cfg = write_config(workspace, {
            "seed": 4,
            "models": {"segmenter": str(workspace / "seg.ckpt"),
                       "spade": str(workspace / "spade.ckpt")},
            "data": {"n_test": 8},
            "attack": {"iterations": 2, "layouts": 2, "step": 0.01},
        }, "seg.json")
        out = tmp_path / "out"
        assert main(["seg-attack", "--config", cfg,
                     "--out-dir", str(out)]) == 0
        doc = read_manifest(out, "seg-attack")
        assert doc["layouts"] == 2
        assert len(doc["trajectories"]) == 2
        assert [r["iteration"] for r in doc["trajectories"][0]] == [0, 1, 2]

    def test_missing_model_is_config_error(self, workspace, tmp_path, capsys):
        cfg = write_config(workspace, {
            "models": {"segmenter": str(workspace / "seg.ckpt")},
        }, "seg_bad.json")
        assert main(["seg-attack", "--config", cfg,
                     "--out-dir", str(tmp_path)]) == 1


class TestAdvtrain:
    def test_supervised_run(self, workspace, tmp_path):
        cfg = write_config(workspace, {
            "seed": 6,
            "data": {"n_train": 48, "n_test": 32},
            "train": {"epochs": 1, "ratio": "1:0", "batch_size": 16},
        }, "train.json")
        out = tmp_path / "out"
        assert main(["advtrain", "--config", cfg, "--out-dir", str(out)]) == 0
        assert (out / "classifier_advtrained.ckpt").exists()
        doc = read_manifest(out, "advtrain")
        assert doc["run"]["config"]["ratio"] == "1:0"
        assert len(doc["run"]["clean_accuracy"]) == 1

    def test_init_from_resumes(self, workspace, tmp_path):
        cfg = write_config(workspace, {
            "seed": 6,
            "data": {"n_train": 32, "n_test": 16},
            "train": {"epochs": 1, "ratio": "1:0", "batch_size": 16,
                      "init_from": str(workspace / "clf.ckpt")},
        }, "train2.json")
        out = tmp_path / "out"
        assert main(["advtrain", "--config", cfg, "--out-dir", str(out)]) == 0
        doc = read_manifest(out, "advtrain")
        # the pretrained model should stay accurate after one clean epoch
        assert doc["run"]["final_clean_accuracy"] > 0.5


class TestEvalAndReport:
    def test_matrix_ood_and_report(self, workspace, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(workspace, {
            "seed": 7,
            "models": {"classifier": str(workspace / "clf.ckpt"),
                       "defended": {"hardened": {
                           "checkpoint": str(workspace / "clf.ckpt"),
                           "trained_against": "gat"}}},
            "data": {"n_test": 32},
            "attack": {"max_iters": 2},
            "eval": {"attacks": ["pgd"], "n_per_cell": 8},
        }, "eval.json")
        assert main(["eval-matrix", "--config", cfg,
                     "--out-dir", str(out)]) == 0
        doc = read_manifest(out, "eval-matrix")
        assert set(doc["matrix"]["cells"]) == {"original/pgd", "hardened/pgd"}
        assert (out / "matrix.csv").exists()
        assert (out / "matrix_cells.jsonl").exists()

        assert main(["ood-eval", "--config", cfg,
                     "--out-dir", str(out)]) == 0
        ood = read_manifest(out, "ood-eval")
        assert set(ood["results"]) == {"original", "hardened"}
        assert 0.0 <= ood["results"]["original"]["ood"] <= 1.0

        assert main(["report", "--out-dir", str(out)]) == 0
        report = json.loads((out / "report.report.json").read_text())
        assert report["version"] == 1
        assert "matrix" in report
        assert "report_hash" in report
