"""Subcommand surface: artifacts, determinism, resume audit, error lines."""

import json

import numpy as np
import pytest

from spikeprune.cli import main

TINY = """
seed = 5
channels = 2, 3
classes = 3
train_samples = 60
test_samples = 30
separation = 4.0
lr = 0.1
batch_size = 16
epochs = 2
N_pre = 2
N_p = 2
N_f = 1
delta_t = 4
s_f = 0.9
N_t = 2
N_1 = 1
N_2 = 2
percent = 0.5
"""


@pytest.fixture
def tiny_cfg(tmp_path, monkeypatch):
    monkeypatch.setenv("SPIKEPRUNE_OUT", str(tmp_path / "runs"))
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY)
    return str(cfg), tmp_path


def read(path):
    with open(path, "rb") as f:
        return f.read()


class TestSubcommands:
    def test_train_artifacts(self, tiny_cfg):
        cfg, root = tiny_cfg
        out = str(root / "t")
        assert main(["train", "--config", cfg, "--out", out]) == 0
        assert (root / "t" / "train_log.csv").exists()
        assert (root / "t" / "checkpoint.ckpt").exists()
        header = (root / "t" / "train_log.csv").read_text().splitlines()[0]
        assert header == "epoch,lr,train_loss,train_acc,test_loss,test_acc,sparsity"

    def test_unstructured_artifacts(self, tiny_cfg):
        cfg, root = tiny_cfg
        out = str(root / "u")
        assert main(["prune-unstructured", "--config", cfg, "--out", out]) == 0
        for name in ("pretrain_log.csv", "epoch_log.csv", "prune_log.csv",
                     "mask_history.ckpt", "survival.json", "checkpoint_final.ckpt"):
            assert (root / "u" / name).exists(), name
        report = json.loads((root / "u" / "survival.json").read_text())
        assert 0.0 <= report["survived_via_regeneration"] <= 1.0

    def test_structured_artifacts(self, tiny_cfg):
        cfg, root = tiny_cfg
        out = str(root / "s")
        assert main(["prune-structured", "--config", cfg, "--out", out]) == 0
        for name in ("train_log.csv", "finetune_log.csv", "flops.json",
                     "criticality.csv", "survival.json",
                     "checkpoint_l1.ckpt", "checkpoint_slim.ckpt"):
            assert (root / "s" / name).exists(), name
        flops = json.loads((root / "s" / "flops.json").read_text())
        assert 0.0 <= flops["reduction"] < 1.0
        crit = (root / "s" / "criticality.csv").read_text().splitlines()
        assert crit[0] == "layer,unit,score" and len(crit) > 1

    def test_analyze_metrics(self, tiny_cfg):
        cfg, root = tiny_cfg
        main(["train", "--config", cfg, "--out", str(root / "t")])
        main(["prune-unstructured", "--config", cfg, "--out", str(root / "u")])
        ckpt = str(root / "t" / "checkpoint.ckpt")
        assert main(["analyze", "--checkpoint", ckpt, "--metric", "variance",
                     "--out", str(root / "a1")]) == 0
        assert main(["analyze", "--checkpoint", ckpt, "--metric", "cosine",
                     "--out", str(root / "a2")]) == 0
        assert main(["analyze", "--checkpoint", str(root / "u" / "checkpoint_final.ckpt"),
                     "--metric", "survival", "--out", str(root / "a3")]) == 0
        assert (root / "a1" / "variance.csv").exists()
        assert (root / "a2" / "cosine.csv").exists()
        assert (root / "a3" / "survival_recomputed.json").exists()

    def test_analyze_survival_matches_run_report(self, tiny_cfg):
        cfg, root = tiny_cfg
        main(["prune-unstructured", "--config", cfg, "--out", str(root / "u")])
        main(["analyze", "--checkpoint", str(root / "u" / "checkpoint_final.ckpt"),
              "--metric", "survival", "--out", str(root / "a")])
        live = json.loads((root / "u" / "survival.json").read_text())
        recomputed = json.loads((root / "a" / "survival_recomputed.json").read_text())
        assert live == recomputed

    def test_transition_between_two_structured_runs(self, tiny_cfg):
        cfg, root = tiny_cfg
        main(["prune-structured", "--config", cfg, "--out", str(root / "s1")])
        main(["prune-structured", "--config", cfg, "--out", str(root / "s2"),
              "--seed", "6"])
        rc = main(["analyze",
                   "--checkpoint", str(root / "s1" / "checkpoint_slim.ckpt"),
                   "--checkpoint-b", str(root / "s2" / "checkpoint_slim.ckpt"),
                   "--metric", "transition", "--out", str(root / "a")])
        assert rc == 0
        assert (root / "a" / "transition.csv").exists()


class TestVerify:
    def test_fresh_build_passes_all_properties(self, capsys):
        assert main(["verify"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert out.count("PASS") >= 12


class TestDeterminism:
    def test_rerun_byte_identical_csvs(self, tiny_cfg):
        cfg, root = tiny_cfg
        main(["prune-unstructured", "--config", cfg, "--out", str(root / "r1")])
        main(["prune-unstructured", "--config", cfg, "--out", str(root / "r2")])
        for name in ("pretrain_log.csv", "epoch_log.csv", "prune_log.csv",
                     "survival.json"):
            assert read(root / "r1" / name) == read(root / "r2" / name), name

    def test_structured_rerun_byte_identical(self, tiny_cfg):
        cfg, root = tiny_cfg
        main(["prune-structured", "--config", cfg, "--out", str(root / "r1")])
        main(["prune-structured", "--config", cfg, "--out", str(root / "r2")])
        for name in ("train_log.csv", "finetune_log.csv", "flops.json"):
            assert read(root / "r1" / name) == read(root / "r2" / name), name

    def test_resume_reproduces_single_command_run(self, tiny_cfg):
        """train (N_pre epochs) then --resume == one prune-unstructured run."""
        cfg, root = tiny_cfg
        main(["prune-unstructured", "--config", cfg, "--out", str(root / "whole")])
        main(["train", "--config", cfg, "--out", str(root / "stage1")])
        rc = main(["prune-unstructured", "--config", cfg, "--out", str(root / "stage2"),
                   "--resume", str(root / "stage1" / "checkpoint.ckpt")])
        assert rc == 0
        for name in ("epoch_log.csv", "prune_log.csv", "survival.json"):
            assert read(root / "whole" / name) == read(root / "stage2" / name), name

    def test_checkpoint_save_load_save_identical(self, tiny_cfg):
        cfg, root = tiny_cfg
        from spikeprune import checkpoint
        main(["train", "--config", cfg, "--out", str(root / "t")])
        p = root / "t" / "checkpoint.ckpt"
        arrays, meta = checkpoint.load(p)
        checkpoint.save(root / "again.ckpt", arrays, meta)
        assert read(p) == read(root / "again.ckpt")


class TestErrors:
    def test_unknown_config_key(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("bogus_key = 1\n")
        rc = main(["train", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert rc == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_malformed_value(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("lr = banana\n")
        rc = main(["train", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert rc == 2
        err = capsys.readouterr().err
        assert "lr" in err

    def test_resume_seed_mismatch(self, tiny_cfg, capsys):
        cfg, root = tiny_cfg
        main(["train", "--config", cfg, "--out", str(root / "t")])
        rc = main(["prune-unstructured", "--config", cfg, "--seed", "99",
                   "--out", str(root / "x"),
                   "--resume", str(root / "t" / "checkpoint.ckpt")])
        assert rc == 2
        assert "seed" in capsys.readouterr().err

    def test_delta_t_exceeding_budget(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(TINY.replace("delta_t = 4", "delta_t = 1000"))
        rc = main(["prune-unstructured", "--config", str(cfg),
                   "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "delta_t" in capsys.readouterr().err

    def test_survival_zeros_on_r0_run(self, tiny_cfg):
        cfg, root = tiny_cfg
        with open(cfg, "a") as f:
            f.write("r = 0.0\n")
        main(["prune-unstructured", "--config", cfg, "--out", str(root / "z")])
        main(["analyze", "--checkpoint", str(root / "z" / "checkpoint_final.ckpt"),
              "--metric", "survival", "--out", str(root / "za")])
        lines = (root / "za" / "survival.csv").read_text().splitlines()[1:]
        assert lines and all(line.endswith(",0.0") for line in lines)

    def test_gmp_only_flag_matches_r0(self, tiny_cfg):
        """--gmp-only and r=0 keep identical masks (baseline reduction)."""
        cfg, root = tiny_cfg
        with open(cfg, "a") as f:
            f.write("r = 0.0\n")
        main(["prune-unstructured", "--config", cfg, "--out", str(root / "a")])
        main(["prune-unstructured", "--config", cfg, "--gmp-only",
              "--out", str(root / "b")])
        from spikeprune import checkpoint
        arrays_a, _ = checkpoint.load(root / "a" / "checkpoint_final.ckpt")
        arrays_b, _ = checkpoint.load(root / "b" / "checkpoint_final.ckpt")
        for name in arrays_a:
            if name.startswith("mask/"):
                np.testing.assert_array_equal(arrays_a[name], arrays_b[name])
