"""Run configuration: one JSON document describing a complete experiment.

The file nests three sections beside the top-level task fields:

    {
      "task": "forecast",
      "dataset": {"name": "etth1", "path": "data/etth1.csv"},
      "lookback": 96,
      "horizon": 96,
      "model": {"num_layers": 2, "embed_dim": 64},
      "train": {"max_epochs": 20, "batch_size": 32},
      "seed": 0,
      "out_dir": "runs/etth1_96"
    }

``model`` holds only architecture hyperparameters; lookback and horizon live
at the top level and the feature count comes from the loaded data, so the
same file works across datasets with different channel counts. Unknown keys
at any level are rejected rather than ignored.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .data import make_sine_dataset, resolve_dataset
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

_TASKS = ("forecast", "impute")
_PRECISIONS = ("float64", "float32")

# lookback / horizon / num_features are owned by the run, not the model section
_MODEL_KEYS = set(ModelConfig.__dataclass_fields__) - {
    "lookback",
    "horizon",
    "num_features",
}
_DATASET_KEYS = {
    "name",
    "path",
    "splits",
    "fractions",
    "standardize",
    "train_windows",
    "val_windows",
    "test_windows",
    "channels",
    "noise",
    "seed",
}
_SINE_ONLY = {"train_windows", "val_windows", "test_windows", "channels", "noise"}


@dataclass
class RunConfig:
    task: str
    dataset: dict
    lookback: int
    horizon: int = None
    missing_ratio: float = None
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    seed: int = 0
    out_dir: str = None
    precision: str = "float64"

    def validate(self):
        if self.task not in _TASKS:
            raise ConfigError(f"task must be one of {_TASKS}, got {self.task!r}")
        if self.precision not in _PRECISIONS:
            raise ConfigError(f"precision must be one of {_PRECISIONS}, got {self.precision!r}")
        if not isinstance(self.dataset, dict):
            raise ConfigError("dataset section must be an object")
        unknown = set(self.dataset) - _DATASET_KEYS
        if unknown:
            raise ConfigError(f"unknown dataset keys: {sorted(unknown)}")
        if self.dataset.get("name") != "sine":
            bad = _SINE_ONLY & set(self.dataset)
            if bad:
                raise ConfigError(f"dataset keys {sorted(bad)} only apply to the sine generator")
        unknown = set(self.model) - _MODEL_KEYS
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        unknown = set(self.train) - set(TrainConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        if self.lookback < 1:
            raise ConfigError(f"lookback must be >= 1, got {self.lookback}")
        if self.task == "forecast":
            if self.horizon is None or self.horizon < 1:
                raise ConfigError(f"forecast task needs horizon >= 1, got {self.horizon}")
            if self.missing_ratio is not None:
                raise ConfigError("missing_ratio only applies to the impute task")
        else:
            if self.missing_ratio is None or not 0.0 < self.missing_ratio < 1.0:
                raise ConfigError(
                    f"impute task needs missing_ratio in (0, 1), got {self.missing_ratio}"
                )
        return self

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**data).validate()

    def to_dict(self):
        return {
            "task": self.task,
            "dataset": dict(self.dataset),
            "lookback": self.lookback,
            "horizon": self.horizon,
            "missing_ratio": self.missing_ratio,
            "model": dict(self.model),
            "train": dict(self.train),
            "seed": self.seed,
            "out_dir": self.out_dir,
            "precision": self.precision,
        }

    def build_model_config(self, num_features):
        """Architecture config for data with ``num_features`` channels.

        Imputation reconstructs the input window, so its output length is
        the lookback regardless of any forecast horizon.
        """
        horizon = self.lookback if self.task == "impute" else self.horizon
        return ModelConfig(
            lookback=self.lookback,
            horizon=horizon,
            num_features=num_features,
            **self.model,
        )

    def build_train_config(self):
        train = dict(self.train)
        train.setdefault("seed", self.seed)
        return TrainConfig.from_dict(train).validate()

    def resolve_data(self):
        """Load and split the dataset this run refers to."""
        ref = self.dataset
        if ref.get("name") == "sine" and not ref.get("path"):
            horizon = self.lookback if self.task == "impute" else self.horizon
            return make_sine_dataset(
                train_windows=ref.get("train_windows", 512),
                val_windows=ref.get("val_windows", 128),
                test_windows=ref.get("test_windows", 128),
                lookback=self.lookback,
                horizon=horizon,
                channels=ref.get("channels", 2),
                noise=ref.get("noise", 0.1),
                seed=ref.get("seed", self.seed),
                standardize=ref.get("standardize", True),
            )
        return resolve_dataset(ref, standardize=ref.get("standardize", True))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_run_config(path):
    if not os.path.exists(path):
        raise ConfigError(f"run config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"run config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"run config {path} must be a JSON object")
    return RunConfig.from_dict(data)
