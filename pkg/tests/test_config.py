import json

import numpy as np
import pytest

from tsrm.config import RunConfig, load_run_config
from tsrm.errors import ConfigError


def forecast_dict(**overrides):
    base = {
        "task": "forecast",
        "dataset": {"name": "sine", "train_windows": 16, "val_windows": 8,
                    "test_windows": 8},
        "lookback": 24,
        "horizon": 8,
        "model": {"num_layers": 1, "embed_dim": 16, "num_heads": 2},
        "train": {"max_epochs": 2, "batch_size": 4},
        "seed": 5,
    }
    base.update(overrides)
    return base


class TestValidation:
    def test_forecast_accepted(self):
        RunConfig.from_dict(forecast_dict())

    def test_impute_accepted(self):
        RunConfig.from_dict(
            forecast_dict(task="impute", horizon=None, missing_ratio=0.25)
        )

    @pytest.mark.parametrize(
        "overrides,fragment",
        [
            ({"task": "classify"}, "task"),
            ({"precision": "float16"}, "precision"),
            ({"horizon": None}, "horizon"),
            ({"horizon": 0}, "horizon"),
            ({"missing_ratio": 0.25}, "missing_ratio"),
            ({"lookback": 0}, "lookback"),
        ],
    )
    def test_forecast_field_errors(self, overrides, fragment):
        with pytest.raises(ConfigError, match=fragment):
            RunConfig.from_dict(forecast_dict(**overrides))

    @pytest.mark.parametrize("ratio", [None, 0.0, 1.0, 2.0])
    def test_impute_ratio_domain(self, ratio):
        with pytest.raises(ConfigError, match="missing_ratio"):
            RunConfig.from_dict(
                forecast_dict(task="impute", horizon=None, missing_ratio=ratio)
            )

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown run config keys"):
            RunConfig.from_dict(forecast_dict(windowing="auto"))

    def test_unknown_model_key(self):
        cfg = forecast_dict()
        cfg["model"]["depth"] = 3
        with pytest.raises(ConfigError, match="unknown model keys"):
            RunConfig.from_dict(cfg)

    def test_model_section_rejects_run_owned_fields(self):
        cfg = forecast_dict()
        cfg["model"]["lookback"] = 96
        with pytest.raises(ConfigError, match="unknown model keys"):
            RunConfig.from_dict(cfg)

    def test_unknown_train_key(self):
        cfg = forecast_dict()
        cfg["train"]["momentum"] = 0.9
        with pytest.raises(ConfigError, match="unknown train keys"):
            RunConfig.from_dict(cfg)

    def test_unknown_dataset_key(self):
        cfg = forecast_dict()
        cfg["dataset"]["frequency"] = "hourly"
        with pytest.raises(ConfigError, match="unknown dataset keys"):
            RunConfig.from_dict(cfg)

    def test_sine_only_keys_need_sine(self):
        cfg = forecast_dict(dataset={"name": "etth1", "noise": 0.1})
        with pytest.raises(ConfigError, match="sine"):
            RunConfig.from_dict(cfg)


class TestBuilders:
    def test_model_config_injects_dimensions(self):
        run = RunConfig.from_dict(forecast_dict())
        mcfg = run.build_model_config(num_features=7).validate()
        assert mcfg.lookback == 24
        assert mcfg.horizon == 8
        assert mcfg.num_features == 7
        assert mcfg.num_layers == 1
        assert mcfg.embed_dim == 16

    def test_impute_forces_horizon_to_lookback(self):
        run = RunConfig.from_dict(
            forecast_dict(task="impute", horizon=None, missing_ratio=0.25)
        )
        mcfg = run.build_model_config(num_features=2).validate()
        assert mcfg.horizon == mcfg.lookback == 24

    def test_train_seed_defaults_to_run_seed(self):
        run = RunConfig.from_dict(forecast_dict())
        assert run.build_train_config().seed == 5

    def test_explicit_train_seed_wins(self):
        cfg = forecast_dict()
        cfg["train"]["seed"] = 11
        run = RunConfig.from_dict(cfg)
        assert run.build_train_config().seed == 11

    def test_resolve_sine_dataset(self):
        run = RunConfig.from_dict(forecast_dict())
        ds = run.resolve_data()
        assert ds.name == "sine"
        assert ds.num_features == 2
        span = 24 + 8
        assert ds.train_end == 16 + span - 1

    def test_sine_seed_follows_run_seed(self):
        a = RunConfig.from_dict(forecast_dict(seed=1)).resolve_data()
        b = RunConfig.from_dict(forecast_dict(seed=1)).resolve_data()
        c = RunConfig.from_dict(forecast_dict(seed=2)).resolve_data()
        np.testing.assert_array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_resolve_csv_dataset(self, tmp_path):
        values = np.random.default_rng(0).standard_normal((30, 2))
        lines = ["date,a,b"] + [
            f"t{i},{float(values[i, 0])!r},{float(values[i, 1])!r}" for i in range(30)
        ]
        path = tmp_path / "toy.csv"
        path.write_text("\n".join(lines) + "\n")
        run = RunConfig.from_dict(
            forecast_dict(dataset={"path": str(path), "splits": [20, 5, 5]},
                          lookback=4, horizon=2)
        )
        ds = run.resolve_data()
        assert ds.train_end == 20
        assert ds.standardized


class TestFileRoundtrip:
    def test_save_load(self, tmp_path):
        run = RunConfig.from_dict(forecast_dict())
        path = tmp_path / "run.json"
        run.save(str(path))
        again = load_run_config(str(path))
        assert again.to_dict() == run.to_dict()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(str(tmp_path / "none.json"))

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{", encoding="utf-8")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_run_config(str(p))

    def test_non_object(self, tmp_path):
        p = tmp_path / "arr.json"
        p.write_text("[1]", encoding="utf-8")
        with pytest.raises(ConfigError, match="JSON object"):
            load_run_config(str(p))

    def test_loaded_config_is_validated(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(forecast_dict(task="classify")), encoding="utf-8")
        with pytest.raises(ConfigError, match="task"):
            load_run_config(str(p))
