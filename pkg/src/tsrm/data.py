"""Dataset ingestion: CSV parsing, canonical splits, train-split z-scoring,
and (lookback, horizon) window extraction.

Known benchmark names carry their canonical row splits and channel counts in
``REGISTRY``; anything else needs explicit row splits or fractions. Global
standardization (train-split statistics only) precedes the model's own
per-instance normalization and can be disabled with ``standardize=False``.
Datasets are immutable after loading; windows are plain numpy views/copies.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError

_STD_GUARD = 1e-8

REGISTRY = {
    "etth1": {"channels": 7, "splits": (8545, 2881, 2881), "frequency": "hourly"},
    "etth2": {"channels": 7, "splits": (8545, 2881, 2881), "frequency": "hourly"},
    "ettm1": {"channels": 7, "splits": (34465, 11521, 11521), "frequency": "15min"},
    "ettm2": {"channels": 7, "splits": (34465, 11521, 11521), "frequency": "15min"},
    "ecl": {"channels": 321, "splits": (18317, 2633, 5261), "frequency": "hourly"},
    "exchange": {"channels": 8, "splits": (5120, 665, 1422), "frequency": "daily"},
    "weather": {"channels": 21, "splits": (36792, 5271, 10540), "frequency": "10min"},
}


@dataclass(frozen=True)
class SeriesDataset:
    """A multivariate series with split bounds and standardization stats."""

    name: str
    values: np.ndarray  # [L, F]
    train_end: int = None
    val_end: int = None
    test_end: int = None
    mean: np.ndarray = None
    std: np.ndarray = None
    frequency: str = None
    standardized: bool = False
    timestamps: tuple = None

    @property
    def num_features(self):
        return self.values.shape[1]

    def split_bounds(self, split):
        bounds = {
            "train": (0, self.train_end),
            "val": (self.train_end, self.val_end),
            "test": (self.val_end, self.test_end),
        }
        if split not in bounds:
            raise ConfigError(f"split must be train, val, or test, got {split!r}")
        lo, hi = bounds[split]
        if lo is None or hi is None:
            raise DataError(f"dataset {self.name!r} has no {split} split bounds")
        return lo, hi

    def split_values(self, split):
        lo, hi = self.split_bounds(split)
        return self.values[lo:hi]

    def destandardize(self, values):
        if not self.standardized:
            return np.asarray(values)
        return np.asarray(values) * self.std + self.mean


def load_csv(path, name=None):
    """Parse a header-first CSV whose first column is a timestamp.

    When ``name`` (or the file stem) is a known benchmark, the channel count
    is validated against the registry.
    """
    if not os.path.exists(path):
        raise DataError(f"dataset file not found: {path}")
    rows = []
    timestamps = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if len(header) < 2:
            raise DataError(f"{path} needs a timestamp column plus at least one feature")
        header_numeric = True
        for cell in header[1:]:
            try:
                float(cell)
            except ValueError:
                header_numeric = False
                break
        if header_numeric:
            raise DataError(f"{path} appears to have no header row")
        width = len(header)
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"{path}: row {i} has {len(row)} cells, expected {width}")
            timestamps.append(row[0])
            parsed = []
            for j, cell in enumerate(row[1:], start=2):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at row {i}, column {j}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path} contains a header but no data rows")
    values = np.asarray(rows, dtype=np.float64)
    key = (name or os.path.splitext(os.path.basename(path))[0]).lower()
    info = REGISTRY.get(key)
    if info is not None:
        if values.shape[1] != info["channels"]:
            raise DataError(
                f"dataset {key!r} must have {info['channels']} channels, file has {values.shape[1]}"
            )
        needed = sum(info["splits"])
        if values.shape[0] < needed:
            raise DataError(
                f"dataset {key!r} needs at least {needed} rows for its canonical splits, "
                f"file has {values.shape[0]}"
            )
    return SeriesDataset(
        name=key,
        values=values,
        frequency=info["frequency"] if info else None,
        timestamps=tuple(timestamps),
    )


def split_and_standardize(ds, splits=None, fractions=None, standardize=True):
    """Fix split bounds and z-score every channel with train-split stats.

    ``splits`` is (train_rows, val_rows, test_rows); ``fractions`` is
    (train_frac, val_frac) with the remainder as test. Known dataset names
    fall back to their canonical splits when neither is given.
    """
    total = ds.values.shape[0]
    if splits is None and fractions is None:
        info = REGISTRY.get(ds.name)
        if info is None:
            raise ConfigError(
                f"dataset {ds.name!r} is not a known benchmark; pass splits or fractions"
            )
        splits = info["splits"]
    if splits is not None:
        train_rows, val_rows, test_rows = (int(v) for v in splits)
    else:
        f_train, f_val = fractions
        if not (0 < f_train < 1 and 0 <= f_val < 1 and f_train + f_val < 1):
            raise ConfigError(f"invalid split fractions ({f_train}, {f_val})")
        train_rows = int(total * f_train)
        val_rows = int(total * f_val)
        test_rows = total - train_rows - val_rows
    if min(train_rows, val_rows, test_rows) < 1:
        raise DataError(f"each split needs at least one row, got {(train_rows, val_rows, test_rows)}")
    if train_rows + val_rows + test_rows > total:
        raise DataError(
            f"splits {(train_rows, val_rows, test_rows)} exceed the {total} rows available"
        )
    train_end = train_rows
    val_end = train_end + val_rows
    test_end = val_end + test_rows
    train_values = ds.values[:train_end]
    mean = train_values.mean(axis=0)
    std = train_values.std(axis=0)
    std = np.where(std < _STD_GUARD, 1.0, std)
    values = (ds.values - mean) / std if standardize else ds.values.copy()
    return replace(
        ds,
        values=values,
        train_end=train_end,
        val_end=val_end,
        test_end=test_end,
        mean=mean,
        std=std,
        standardized=standardize,
    )


@dataclass(frozen=True)
class WindowBatch:
    """Stacked windows of one split: inputs [B, T, F], targets [B, H, F]."""

    inputs: np.ndarray
    targets: np.ndarray
    starts: np.ndarray

    def __len__(self):
        return self.inputs.shape[0]


def make_windows(ds, split, lookback, horizon, stride=1, task="forecast"):
    """All windows of a split, never straddling its boundary.

    Forecast windows pair input rows [i, i+T) with target rows [i+T, i+T+H);
    imputation windows (horizon ignored, H = T) target the input itself.
    """
    if task not in ("forecast", "impute"):
        raise ConfigError(f"task must be forecast or impute, got {task!r}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    seg = ds.split_values(split)
    span = lookback + horizon if task == "forecast" else lookback
    if span > seg.shape[0]:
        raise DataError(
            f"{split} split has {seg.shape[0]} rows, too short for lookback {lookback}"
            + (f" + horizon {horizon}" if task == "forecast" else "")
        )
    starts = np.arange(0, seg.shape[0] - span + 1, stride)
    inputs = np.stack([seg[i : i + lookback] for i in starts])
    if task == "forecast":
        targets = np.stack([seg[i + lookback : i + span] for i in starts])
    else:
        targets = inputs.copy()
    return WindowBatch(inputs=inputs, targets=targets, starts=starts)


def iter_minibatches(windows, batch_size, rng=None):
    """Yield (inputs, targets, indices) minibatches; shuffles when rng given."""
    n = len(windows)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for lo in range(0, n, batch_size):
        idx = order[lo : lo + batch_size]
        yield windows.inputs[idx], windows.targets[idx], idx


def load_registry(path):
    """Read a JSON registry file mapping dataset names to paths and splits."""
    try:
        with open(path, encoding="utf-8") as fh:
            entries = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read dataset registry {path}: {exc}") from None
    if not isinstance(entries, dict):
        raise DataError(f"dataset registry {path} must be a JSON object")
    return entries


def resolve_dataset(ref, data_dir=None, standardize=True):
    """Build a ready-to-train dataset from a config reference.

    ``ref`` carries ``name`` and/or ``path`` plus optional ``splits`` /
    ``fractions``. A bare name resolves to ``<data_dir>/<name>.csv`` with
    ``data_dir`` from the argument or the TSRM_DATA_DIR environment variable.
    """
    name = ref.get("name")
    path = ref.get("path")
    if path is None:
        if name is None:
            raise ConfigError("dataset reference needs a name or a path")
        base = data_dir or os.environ.get("TSRM_DATA_DIR")
        if not base:
            raise ConfigError(
                f"dataset {name!r} given without a path and TSRM_DATA_DIR is not set"
            )
        path = os.path.join(base, f"{name}.csv")
    ds = load_csv(path, name=name)
    splits = tuple(ref["splits"]) if ref.get("splits") else None
    fractions = tuple(ref["fractions"]) if ref.get("fractions") else None
    return split_and_standardize(ds, splits=splits, fractions=fractions, standardize=standardize)


def make_sine_dataset(
    train_windows,
    val_windows,
    test_windows,
    lookback,
    horizon,
    channels=2,
    noise=0.1,
    seed=0,
    standardize=True,
):
    """Noisy multi-period sine benchmark sized in forecast windows per split."""
    rng = np.random.default_rng(seed)
    span = lookback + horizon
    lens = [n + span - 1 for n in (train_windows, val_windows, test_windows)]
    total = sum(lens)
    t = np.arange(total, dtype=np.float64)[:, None]
    periods = 24.0 * (1.0 + 0.55 * np.arange(channels))[None, :]
    phases = rng.uniform(0, 2 * np.pi, size=(1, channels))
    amps = 1.0 + 0.3 * np.arange(channels)[None, :]
    values = amps * np.sin(2 * np.pi * t / periods + phases)
    values += noise * rng.standard_normal(values.shape)
    ds = SeriesDataset(name="sine", values=values, frequency="synthetic")
    return split_and_standardize(ds, splits=tuple(lens), standardize=standardize)
