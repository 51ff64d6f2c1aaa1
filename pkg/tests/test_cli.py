import contextlib
import csv
import io
import json
import os

import numpy as np
import pytest

from tsrm.cli import main
from tsrm.config import load_run_config
from tsrm.model import TSRM, ModelConfig, save_checkpoint


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


def toy_config(task="forecast", **overrides):
    doc = {
        "task": task,
        "dataset": {"name": "sine", "train_windows": 24, "val_windows": 8,
                    "test_windows": 8},
        "lookback": 12,
        "horizon": 4,
        "model": {"num_layers": 1, "num_heads": 2, "embed_dim": 8,
                  "conv_specs": [[3, 1]], "num_convs": 1, "dropout": 0.0},
        "train": {"max_epochs": 3, "batch_size": 8, "initial_lr": 0.01},
        "seed": 0,
    }
    if task == "impute":
        doc["horizon"] = None
        doc["missing_ratio"] = 0.25
    doc.update(overrides)
    return doc


def parse_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], rows[1:]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    paths = {"root": root}
    for task in ("forecast", "impute"):
        cfg_path = root / f"{task}.json"
        cfg_path.write_text(json.dumps(toy_config(task)))
        out_dir = root / f"run_{task}"
        code, out, err = run_cli(
            ["train", "--config", str(cfg_path), "--out", str(out_dir)]
        )
        assert code == 0, err
        paths[task] = {
            "config": cfg_path,
            "out": out_dir,
            "ckpt": out_dir / "model.ckpt",
            "stdout": out,
            "stderr": err,
        }
    return paths


class TestTrain:
    def test_outputs_and_artifacts(self, workspace):
        info = workspace["forecast"]
        assert "best_epoch=" in info["stdout"]
        assert "params=" in info["stdout"]
        assert f"checkpoint={info['ckpt']}" in info["stdout"]
        assert (info["out"] / "history.csv").exists()
        assert (info["out"] / "config.json").exists()
        assert info["ckpt"].exists()

    def test_progress_on_stderr_not_stdout(self, workspace):
        info = workspace["forecast"]
        assert "train_loss=" in info["stderr"]
        assert "train_loss=" not in info["stdout"]

    def test_snapshot_is_resolved_and_loadable(self, workspace):
        info = workspace["forecast"]
        snapshot = json.loads((info["out"] / "config.json").read_text())
        model_keys = set(ModelConfig.__dataclass_fields__) - {
            "lookback", "horizon", "num_features"
        }
        assert set(snapshot["model"]) == model_keys
        assert snapshot["train"]["max_epochs"] == 3
        assert snapshot["train"]["seed"] == 0
        reloaded = load_run_config(str(info["out"] / "config.json"))
        assert reloaded.task == "forecast"
        assert reloaded.model["embed_dim"] == 8

    def test_same_seed_reproduces_checkpoint(self, workspace, tmp_path):
        info = workspace["forecast"]
        code, _, err = run_cli(
            ["train", "--config", str(info["config"]), "--out", str(tmp_path / "again")]
        )
        assert code == 0, err
        from tsrm.model import load_checkpoint

        original, _ = load_checkpoint(str(info["ckpt"]))
        repeat, _ = load_checkpoint(str(tmp_path / "again" / "model.ckpt"))
        for (name_a, p_a), (name_b, p_b) in zip(
            original.named_parameters(), repeat.named_parameters()
        ):
            assert name_a == name_b
            np.testing.assert_array_equal(p_a.data, p_b.data)
        strip_seconds = lambda text: [
            line.rsplit(",", 1)[0] for line in text.splitlines()
        ]
        assert strip_seconds((info["out"] / "history.csv").read_text()) == strip_seconds(
            (tmp_path / "again" / "history.csv").read_text()
        )

    def test_seed_override_changes_history(self, workspace, tmp_path):
        info = workspace["forecast"]
        code, _, _ = run_cli(
            ["train", "--config", str(info["config"]), "--out", str(tmp_path / "s1"),
             "--seed", "1"]
        )
        assert code == 0
        base = (info["out"] / "history.csv").read_text().splitlines()
        other = (tmp_path / "s1" / "history.csv").read_text().splitlines()
        base_losses = [line.split(",")[1] for line in base[1:]]
        other_losses = [line.split(",")[1] for line in other[1:]]
        assert base_losses != other_losses

    def test_missing_out_dir_is_config_error(self, workspace):
        code, _, err = run_cli(["train", "--config", str(workspace["forecast"]["config"])])
        assert code == 1
        assert "error:" in err and "out" in err

    def test_unknown_model_key_exits_1(self, tmp_path):
        cfg = toy_config()
        cfg["model"]["depth"] = 2
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(cfg))
        code, _, err = run_cli(["train", "--config", str(path), "--out", str(tmp_path / "o")])
        assert code == 1
        assert "unknown model keys" in err

    def test_missing_dataset_exits_2(self, tmp_path):
        cfg = toy_config(dataset={"path": str(tmp_path / "none.csv"),
                                  "splits": [20, 5, 5]})
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        code, _, err = run_cli(["train", "--config", str(path), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "not found" in err


class TestEval:
    def test_forecast_single_row(self, workspace):
        code, out, err = run_cli(
            ["eval", "--checkpoint", str(workspace["forecast"]["ckpt"])]
        )
        assert code == 0, err
        header, rows = parse_csv(out)
        assert header == ["split", "horizon_or_ratio", "mse", "mae", "epoch",
                          "config_hash"]
        assert len(rows) == 1
        assert rows[0][0] == "test"
        assert rows[0][1] == "4"
        assert float(rows[0][2]) > 0
        assert rows[0][5] != ""

    def test_val_split_matches_training_history(self, workspace):
        info = workspace["impute"]
        history = (info["out"] / "history.csv").read_text().splitlines()
        best = min(float(line.split(",")[2]) for line in history[1:])
        code, out, _ = run_cli(
            ["eval", "--checkpoint", str(info["ckpt"]), "--split", "val"]
        )
        assert code == 0
        _, rows = parse_csv(out)
        assert abs(float(rows[0][2]) - best) <= 1e-9

    def test_imputation_ratio_sweep_with_avg(self, workspace):
        code, out, _ = run_cli(
            ["eval", "--checkpoint", str(workspace["impute"]["ckpt"]),
             "--ratios", "0.125,0.25"]
        )
        assert code == 0
        _, rows = parse_csv(out)
        assert [row[1] for row in rows] == ["0.125", "0.25", "AVG"]
        assert float(rows[2][2]) == pytest.approx(
            (float(rows[0][2]) + float(rows[1][2])) / 2
        )

    def test_multiple_checkpoints_average(self, workspace):
        ckpt = str(workspace["forecast"]["ckpt"])
        code, out, _ = run_cli(["eval", "--checkpoint", ckpt, "--checkpoint", ckpt])
        assert code == 0
        _, rows = parse_csv(out)
        assert len(rows) == 3
        assert rows[2][1] == "AVG"

    def test_out_file_matches_stdout(self, workspace, tmp_path):
        code, out, _ = run_cli(
            ["eval", "--checkpoint", str(workspace["forecast"]["ckpt"]),
             "--out", str(tmp_path)]
        )
        assert code == 0
        assert (tmp_path / "eval.csv").read_bytes().decode() == out

    def test_bad_ratio_rejected(self, workspace):
        code, _, err = run_cli(
            ["eval", "--checkpoint", str(workspace["impute"]["ckpt"]),
             "--ratios", "1.5"]
        )
        assert code == 1
        assert "ratio" in err

    def test_foreign_checkpoint_rejected(self, tmp_path):
        cfg = ModelConfig(lookback=12, horizon=4, num_features=2, num_layers=1,
                          num_heads=2, embed_dim=8, conv_specs=[(3, 1)],
                          num_convs=1).validate()
        path = tmp_path / "bare.ckpt"
        save_checkpoint(str(path), TSRM(cfg, seed=0))
        code, _, err = run_cli(["eval", "--checkpoint", str(path)])
        assert code == 1
        assert "carries no run config" in err

    def test_deterministic_imputation_eval(self, workspace):
        argv = ["eval", "--checkpoint", str(workspace["impute"]["ckpt"])]
        _, out_a, _ = run_cli(argv)
        _, out_b, _ = run_cli(argv)
        assert out_a == out_b


class TestExplain:
    def test_report_files(self, workspace, tmp_path):
        code, out, err = run_cli(
            ["explain", "--checkpoint", str(workspace["forecast"]["ckpt"]),
             "--split", "test", "--window", "0", "--out", str(tmp_path)]
        )
        assert code == 0, err
        data = json.loads((tmp_path / "attention_test_0.json").read_text())
        assert data["threshold"] == 0.85
        assert data["num_layers"] == 1
        assert len(data["timelines"]) == 1
        assert len(data["combined"]) == 2
        assert len(data["combined"][0]) == 12
        with open(tmp_path / "attention_test_0.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 2 * 12
        assert "feature 0:" in out
        assert "report=" in out

    def test_deterministic_reports(self, workspace, tmp_path):
        argv = ["explain", "--checkpoint", str(workspace["forecast"]["ckpt"]),
                "--window", "2"]
        code, _, _ = run_cli(argv + ["--out", str(tmp_path / "a")])
        assert code == 0
        code, _, _ = run_cli(argv + ["--out", str(tmp_path / "b")])
        assert code == 0
        name = "attention_test_2.json"
        assert (tmp_path / "a" / name).read_text() == (tmp_path / "b" / name).read_text()

    def test_threshold_flag(self, workspace, tmp_path):
        code, _, _ = run_cli(
            ["explain", "--checkpoint", str(workspace["forecast"]["ckpt"]),
             "--threshold", "0.2", "--out", str(tmp_path)]
        )
        assert code == 0
        data = json.loads((tmp_path / "attention_test_0.json").read_text())
        assert data["threshold"] == 0.2
        assert all(len(h) >= 1 for h in data["highlights"])

    def test_window_out_of_range(self, workspace):
        code, _, err = run_cli(
            ["explain", "--checkpoint", str(workspace["forecast"]["ckpt"]),
             "--window", "999"]
        )
        assert code == 1
        assert "out of range" in err

    def test_default_out_is_checkpoint_dir(self, workspace):
        code, _, _ = run_cli(
            ["explain", "--checkpoint", str(workspace["forecast"]["ckpt"]),
             "--split", "val", "--window", "1"]
        )
        assert code == 0
        assert (workspace["forecast"]["out"] / "attention_val_1.json").exists()


class TestAblate:
    def test_depth_sweep_rows(self, workspace, tmp_path):
        code, out, err = run_cli(
            ["ablate", "--config", str(workspace["forecast"]["config"]),
             "--variants", "n_sweep", "--out", str(tmp_path), "--jobs", "2"]
        )
        assert code == 0, err
        header, rows = parse_csv(out)
        assert header == ["variant", "num_layers", "trainable_params",
                          "best_epoch", "best_val_mse", "test_mse", "test_mae"]
        assert [row[0] for row in rows] == [f"n{d}" for d in range(9)]
        assert [int(row[1]) for row in rows] == list(range(9))
        params = [int(row[2]) for row in rows]
        assert all(b > a for a, b in zip(params, params[1:]))
        assert (tmp_path / "ablation.csv").read_bytes().decode() == out

    def test_variant_runs_write_resolved_snapshots(self, workspace, tmp_path):
        code, out, _ = run_cli(
            ["ablate", "--config", str(workspace["forecast"]["config"]),
             "--variants", "r0,no_merge", "--out", str(tmp_path)]
        )
        assert code == 0
        _, rows = parse_csv(out)
        assert [row[0] for row in rows] == ["base", "r0", "no_merge"]
        r0_cfg = load_run_config(str(tmp_path / "r0" / "config.json"))
        assert r0_cfg.model["conv_specs"] == [[1, 1, 1]]
        assert (tmp_path / "r0" / "model.ckpt").exists()
        by_name = {row[0]: int(row[2]) for row in rows}
        assert by_name["no_merge"] < by_name["base"]

    def test_unknown_variant_rejected(self, workspace, tmp_path):
        code, _, err = run_cli(
            ["ablate", "--config", str(workspace["forecast"]["config"]),
             "--variants", "bogus", "--out", str(tmp_path)]
        )
        assert code == 1
        assert "unknown ablation variants" in err


class TestCountParams:
    def test_matches_train_report(self, workspace):
        info = workspace["forecast"]
        code, out, _ = run_cli(["count-params", "--config", str(info["config"])])
        assert code == 0
        reported = int(info["stdout"].split("params=")[1].split()[0])
        assert int(out.strip()) == reported

    def test_features_flag_skips_data(self, tmp_path):
        cfg = toy_config(dataset={"path": str(tmp_path / "missing.csv"),
                                  "splits": [20, 5, 5]})
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        code, out, err = run_cli(
            ["count-params", "--config", str(path), "--features", "2"]
        )
        assert code == 0, err
        assert int(out.strip()) > 0

    def test_feature_count_changes_total(self, workspace):
        cfg_path = str(workspace["forecast"]["config"])
        _, out2, _ = run_cli(["count-params", "--config", cfg_path, "--features", "2"])
        _, out7, _ = run_cli(["count-params", "--config", cfg_path, "--features", "7"])
        assert int(out7.strip()) > int(out2.strip())
