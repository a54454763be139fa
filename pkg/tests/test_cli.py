"""CLI surface: subcommands, exit codes, reproducible outputs."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from riskclr.cli import main
from riskclr.data import SyntheticConfig, generate_synthetic, save


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    cfg = SyntheticConfig(n_subjects=24, n_downstream=40, duration=4.0, seed=9)
    pre, down = generate_synthetic(cfg)
    save(pre, root / "pre.rds")
    save(down, root / "down.rds")
    return root


class TestScore2Command:
    def test_known_rows(self, runner, tmp_path):
        src = tmp_path / "meta.csv"
        with open(src, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["age", "gender", "smoking", "sbp",
                                                    "diabetes", "tchol", "hdl"])
            writer.writeheader()
            writer.writerow({"age": "60", "gender": "male", "smoking": "0", "sbp": "120",
                             "diabetes": "0", "tchol": "6", "hdl": "1.3"})
            writer.writerow({"age": "60", "gender": "female", "smoking": "0", "sbp": "120",
                             "diabetes": "0", "tchol": "6", "hdl": "1.3"})
            writer.writerow({"age": "60", "gender": "male", "smoking": "", "sbp": "120",
                             "diabetes": "", "tchol": "", "hdl": ""})
        result = runner.invoke(main, ["score2", "--input", str(src)])
        assert result.exit_code == 0, result.output
        rows = list(csv.DictReader(result.output.splitlines()))
        assert abs(float(rows[0]["r"]) - 0.0395) < 1e-12
        assert abs(float(rows[1]["r"]) - 0.0224) < 1e-12
        assert rows[0]["m"] == "0"
        assert rows[2]["m"] == "4"

    def test_missing_input_exit_3(self, runner):
        result = runner.invoke(main, ["score2", "--input", "/nonexistent.csv"])
        assert result.exit_code == 3

    def test_bad_row_exit_2(self, runner, tmp_path):
        src = tmp_path / "meta.csv"
        src.write_text("age,gender,smoking,sbp,diabetes,tchol,hdl\n-5,male,,,,,\n")
        result = runner.invoke(main, ["score2", "--input", str(src)])
        assert result.exit_code == 2


class TestGenData:
    def test_generates_and_echoes_config(self, runner, tmp_path):
        out = tmp_path / "run"
        result = runner.invoke(main, ["gen-data", "--out-dir", str(out),
                                      "--n-subjects", "6", "--n-downstream", "4",
                                      "--seed", "3"])
        assert result.exit_code == 0, result.output
        assert (out / "pretrain.rds").exists()
        assert (out / "downstream.rds").exists()
        echoed = json.loads((out / "config.json").read_text())
        assert echoed["synthetic"]["n_subjects"] == 6

    def test_byte_reproducible(self, runner, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            result = runner.invoke(main, ["gen-data", "--out-dir", str(out),
                                          "--n-subjects", "5", "--n-downstream", "3",
                                          "--seed", "7"])
            assert result.exit_code == 0
        assert (a / "pretrain.rds").read_bytes() == (b / "pretrain.rds").read_bytes()
        assert (a / "downstream.rds").read_bytes() == (b / "downstream.rds").read_bytes()

    def test_unknown_config_key_exit_2(self, runner, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"synthetic": {"bogus_key": 1}}))
        result = runner.invoke(main, ["gen-data", "--config", str(cfg),
                                      "--out-dir", str(tmp_path / "x")])
        assert result.exit_code == 2

    def test_config_parse_error_exit_2(self, runner, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        result = runner.invoke(main, ["gen-data", "--config", str(cfg),
                                      "--out-dir", str(tmp_path / "x")])
        assert result.exit_code == 2


class TestPipelineCommands:
    def test_pretrain_probe_finetune_ablate(self, runner, small_data, tmp_path):
        run = tmp_path / "run"
        result = runner.invoke(main, [
            "pretrain", "--data", str(small_data / "pre.rds"), "--run-dir", str(run),
            "--encoder", "tiny", "--epochs", "2", "--batch-size", "12", "--seed", "3",
        ])
        assert result.exit_code == 0, result.output
        ckpt = run / "best.ckpt"
        assert ckpt.exists()
        assert (run / "metrics.csv").exists()

        probe_dir = tmp_path / "probe"
        result = runner.invoke(main, [
            "probe", "--checkpoint", str(ckpt), "--data", str(small_data / "down.rds"),
            "--run-dir", str(probe_dir), "--task", "binary",
        ])
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output.strip().splitlines()[-1])
        assert "test" in payload and "auroc" in payload["test"]

        ft_dir = tmp_path / "ft"
        cfg = tmp_path / "ft.json"
        cfg.write_text(json.dumps({"downstream": {"epochs": 1}}))
        result = runner.invoke(main, [
            "finetune", "--config", str(cfg), "--checkpoint", str(ckpt),
            "--data", str(small_data / "down.rds"), "--run-dir", str(ft_dir),
            "--task", "binary",
        ])
        assert result.exit_code == 0, result.output

        ab_dir = tmp_path / "ab"
        abcfg = tmp_path / "ab.json"
        abcfg.write_text(json.dumps({"pretrain": {"epochs": 1, "batch_size": 12, "seed": 3},
                                     "downstream": {"epochs": 2}}))
        result = runner.invoke(main, [
            "ablate", "--config", str(abcfg), "--pretrain-data", str(small_data / "pre.rds"),
            "--downstream-data", str(small_data / "down.rds"), "--run-dir", str(ab_dir),
        ])
        assert result.exit_code == 0, result.output
        rows = list(csv.DictReader(open(ab_dir / "ablation.csv")))
        assert [r["variant"] for r in rows] == ["nce", "w", "d", "nce+d", "w+d"]

    def test_data_root_env_resolution(self, runner, small_data, tmp_path, monkeypatch):
        monkeypatch.setenv("RISKCLR_DATA_ROOT", str(small_data))
        run = tmp_path / "rootrun"
        result = runner.invoke(main, [
            "pretrain", "--data", "pre.rds", "--run-dir", str(run),
            "--encoder", "tiny", "--epochs", "1", "--batch-size", "12", "--seed", "3",
        ])
        assert result.exit_code == 0, result.output

    def test_probe_missing_checkpoint_exit_3(self, runner, small_data, tmp_path):
        result = runner.invoke(main, [
            "probe", "--checkpoint", str(tmp_path / "none.ckpt"),
            "--data", str(small_data / "down.rds"), "--run-dir", str(tmp_path / "p"),
        ])
        assert result.exit_code == 3


class TestGradcheckCommand:
    def test_passes_and_dumps_weights(self, runner, tmp_path):
        dump = tmp_path / "w.csv"
        result = runner.invoke(main, ["gradcheck", "--dump-weights", str(dump)])
        assert result.exit_code == 0, result.output
        assert "nt_xent" in result.output
        W = np.loadtxt(dump, delimiter=",")
        assert W.shape == (16, 16)
        assert np.all(W >= 0) and np.all(W <= 1)

    def test_fails_on_unreachable_tolerance(self, runner):
        result = runner.invoke(main, ["gradcheck", "--tolerance", "1e-30"])
        assert result.exit_code == 1


class TestEvalCommand:
    def test_binary(self, runner, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("score,label\n0.9,1\n0.1,0\n0.8,1\n0.2,0\n")
        result = runner.invoke(main, ["eval", "--pred", str(path), "--task", "binary"])
        assert result.exit_code == 0
        assert json.loads(result.output)["value"] == 1.0

    def test_regression(self, runner, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("pred,truth\n1.0,2.0\n3.0,3.0\n")
        result = runner.invoke(main, ["eval", "--pred", str(path), "--task", "regression"])
        assert json.loads(result.output)["value"] == 0.5

    def test_unknown_task_exit_2(self, runner, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("score,label\n0.9,1\n")
        result = runner.invoke(main, ["eval", "--pred", str(path), "--task", "bogus"])
        assert result.exit_code == 2


class TestInspect:
    def test_config_breakdown(self, runner):
        result = runner.invoke(main, ["inspect", "--encoder", "s"])
        assert result.exit_code == 0
        assert "total: 423312" in result.output

    def test_requires_exactly_one_source(self, runner):
        assert runner.invoke(main, ["inspect"]).exit_code == 2

    def test_help_lists_flags(self, runner):
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for sub in ("score2", "gen-data", "pretrain", "probe", "finetune",
                    "ablate", "gradcheck", "eval", "inspect"):
            assert sub in result.output
