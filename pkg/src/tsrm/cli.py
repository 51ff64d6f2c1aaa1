"""Command-line interface.

Subcommands: train, eval, explain, ablate, count-params. Progress messages
go to stderr; result rows and summaries go to stdout. Exit codes: 0 success,
1 configuration or contract error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import tensor as tt
from .config import RunConfig, load_run_config
from .data import make_windows
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    NumericError,
)
from .explain import report_from_forward, report_to_csv, report_to_json
from .model import TSRM, count_parameters, load_checkpoint
from .tasks import EvalRecord, metrics
from .training import fixed_masks, predict, train

_ABLATION_COLUMNS = (
    "variant",
    "num_layers",
    "trainable_params",
    "best_epoch",
    "best_val_mse",
    "test_mse",
    "test_mae",
)


def _log(message):
    print(message, file=sys.stderr, flush=True)


def _snapshot_dict(run_config, model_config, train_config):
    """Fully resolved run document; loadable again by load_run_config."""
    doc = run_config.to_dict()
    model = model_config.to_dict()
    for key in ("lookback", "horizon", "num_features"):
        model.pop(key)
    doc["model"] = model
    doc["train"] = train_config.to_dict()
    return doc


def _train_run(run_config, out_dir, force_ranges=False, log=_log, quiet=False):
    """Shared train core: resolve data, build, fit, snapshot. Returns
    (model, dataset, result, snapshot)."""
    tt.set_default_dtype(run_config.precision)
    dataset = run_config.resolve_data()
    num_features = dataset.values.shape[1]
    model_config = run_config.build_model_config(num_features)
    model = TSRM(model_config, seed=run_config.seed, force_ranges=force_ranges)
    train_config = run_config.build_train_config()
    snapshot = _snapshot_dict(run_config, model.config, train_config)
    snapshot["out_dir"] = out_dir
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
            json.dump(snapshot, fh, indent=2, sort_keys=True)
            fh.write("\n")
    result = train(
        model,
        dataset,
        run_config.task,
        train_config,
        missing_ratio=run_config.missing_ratio,
        out_dir=out_dir,
        extra_meta={"run_config": snapshot},
        log=None if quiet else log,
    )
    return model, dataset, result, snapshot


def _print_records(records, out_path=None):
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(EvalRecord.CSV_FIELDS)
    for record in records:
        writer.writerow(record.to_csv_row())
    text = buffer.getvalue()
    sys.stdout.write(text)
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def cmd_train(args):
    run_config = load_run_config(args.config)
    if args.seed is not None:
        run_config.seed = args.seed
        run_config.train.pop("seed", None)
    out_dir = args.out or run_config.out_dir
    if out_dir is None:
        raise ConfigError("no output directory: set out_dir in the config or pass --out")
    model, _, result, _ = _train_run(run_config, out_dir, force_ranges=args.force_ranges)
    print(
        f"best_epoch={result.best_epoch} best_val_mse={result.best_val_mse!r} "
        f"params={count_parameters(model)}"
    )
    print(f"checkpoint={result.checkpoint_path}")
    print(f"history={result.history_path}")
    return 0


def _checkpoint_run_config(extra, checkpoint_path):
    stored = extra.get("run_config")
    if not stored:
        raise ConfigError(
            f"{checkpoint_path} carries no run config; it was not produced by the train command"
        )
    return RunConfig.from_dict(stored)


def cmd_eval(args):
    records = []
    for path in args.checkpoint:
        model, extra = load_checkpoint(path)
        run_config = _checkpoint_run_config(extra, path)
        tt.set_default_dtype(run_config.precision)
        dataset = run_config.resolve_data()
        config = model.config
        windows = make_windows(
            dataset, args.split, config.lookback, config.horizon, task=run_config.task
        )
        batch_size = extra.get("train_config", {}).get("batch_size", 32)
        if run_config.task == "forecast":
            preds = predict(model, windows.inputs, batch_size)
            records.append(
                metrics(
                    preds,
                    windows.targets,
                    split=args.split,
                    horizon_or_ratio=config.horizon,
                    epoch=extra.get("best_epoch"),
                    config_hash=config.hash(),
                )
            )
        else:
            ratios = args.ratios or [extra.get("missing_ratio")]
            for ratio in ratios:
                if not ratio or not 0.0 < ratio < 1.0:
                    raise ConfigError(f"evaluation ratio must be in (0, 1), got {ratio}")
                masks = fixed_masks(
                    len(windows),
                    config.lookback,
                    config.num_features,
                    ratio,
                    extra.get("seed", 0),
                )
                preds = predict(model, windows.inputs, batch_size, masks=masks)
                stacked = np.stack([m.mask for m in masks])
                records.append(
                    metrics(
                        preds,
                        windows.targets,
                        mask=stacked,
                        split=args.split,
                        horizon_or_ratio=ratio,
                        epoch=extra.get("best_epoch"),
                        config_hash=config.hash(),
                    )
                )
    if len(records) > 1:
        records.append(
            EvalRecord(
                mse=float(np.mean([r.mse for r in records])),
                mae=float(np.mean([r.mae for r in records])),
                split=args.split,
                horizon_or_ratio="AVG",
            )
        )
    out_path = os.path.join(args.out, "eval.csv") if args.out else None
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    _print_records(records, out_path)
    return 0


def cmd_explain(args):
    model, extra = load_checkpoint(args.checkpoint)
    run_config = _checkpoint_run_config(extra, args.checkpoint)
    tt.set_default_dtype(run_config.precision)
    dataset = run_config.resolve_data()
    config = model.config
    windows = make_windows(
        dataset, args.split, config.lookback, config.horizon, task=run_config.task
    )
    if not 0 <= args.window < len(windows):
        raise ConfigError(
            f"window index {args.window} out of range [0, {len(windows) - 1}] "
            f"for the {args.split} split"
        )
    window = windows.inputs[args.window]
    _, maps = model.forward(window, return_attention=True)
    report = report_from_forward(
        maps, config.build_conv_specs(), config.lookback, threshold=args.threshold
    )
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, f"attention_{args.split}_{args.window}.json")
    csv_path = os.path.join(out_dir, f"attention_{args.split}_{args.window}.csv")
    report_to_json(report, json_path)
    report_to_csv(report, csv_path, values=window)
    for f, picks in enumerate(report.highlights):
        print(f"feature {f}: {len(picks)}/{config.lookback} steps >= {report.threshold}")
    print(f"report={json_path}")
    print(f"table={csv_path}")
    return 0


def _variant_documents(run_config, names):
    """Expand variant names into (label, run dict) pairs.

    The comparative variants (no_merge, r1, r0) also schedule the unmodified
    base config once so the comparison lives in one table; n_sweep stands
    alone since the sweep already covers the default depth.
    """
    known = {"n_sweep", "no_merge", "r1", "r0"}
    requested = [name.strip().lower() for name in names]
    unknown = set(requested) - known
    if unknown:
        raise ConfigError(f"unknown ablation variants {sorted(unknown)}; expected {sorted(known)}")
    docs = []
    base = run_config.to_dict()
    base.pop("out_dir")
    if set(requested) & {"no_merge", "r1", "r0"}:
        docs.append(("base", json.loads(json.dumps(base))))
    for name in requested:
        if name == "n_sweep":
            for depth in range(9):
                doc = json.loads(json.dumps(base))
                doc["model"]["num_layers"] = depth
                docs.append((f"n{depth}", doc))
        elif name == "no_merge":
            doc = json.loads(json.dumps(base))
            doc["model"]["merge_trainable"] = False
            docs.append(("no_merge", doc))
        elif name == "r1":
            doc = json.loads(json.dumps(base))
            doc["model"]["conv_specs"] = [[3, 1]]
            doc["model"]["num_convs"] = 1
            docs.append(("r1", doc))
        elif name == "r0":
            doc = json.loads(json.dumps(base))
            doc["model"]["conv_specs"] = [[1, 1, 1]]
            doc["model"]["num_convs"] = 1
            docs.append(("r0", doc))
    return docs


def _run_variant(payload):
    """Train one ablation variant and score it on the test split.

    Module-level so process pools can pickle it.
    """
    label, doc, out_dir, force_ranges = payload
    run_config = RunConfig.from_dict(doc)
    model, dataset, result, _ = _train_run(
        run_config, out_dir, force_ranges=force_ranges, quiet=True
    )
    config = model.config
    windows = make_windows(
        dataset, "test", config.lookback, config.horizon, task=run_config.task
    )
    batch_size = run_config.build_train_config().batch_size
    if run_config.task == "forecast":
        preds = predict(model, windows.inputs, batch_size)
        record = metrics(preds, windows.targets)
    else:
        masks = fixed_masks(
            len(windows),
            config.lookback,
            config.num_features,
            run_config.missing_ratio,
            run_config.seed,
        )
        preds = predict(model, windows.inputs, batch_size, masks=masks)
        record = metrics(preds, windows.targets, mask=np.stack([m.mask for m in masks]))
    return {
        "variant": label,
        "num_layers": config.num_layers,
        "trainable_params": count_parameters(model),
        "best_epoch": result.best_epoch,
        "best_val_mse": repr(result.best_val_mse),
        "test_mse": repr(record.mse),
        "test_mae": repr(record.mae),
    }


def cmd_ablate(args):
    run_config = load_run_config(args.config)
    if args.seed is not None:
        run_config.seed = args.seed
        run_config.train.pop("seed", None)
    out_dir = args.out or run_config.out_dir
    if out_dir is None:
        raise ConfigError("no output directory: set out_dir in the config or pass --out")
    os.makedirs(out_dir, exist_ok=True)
    docs = _variant_documents(run_config, args.variants.split(","))
    payloads = [
        (label, doc, os.path.join(out_dir, label), args.force_ranges) for label, doc in docs
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_run_variant, payloads))
    else:
        rows = []
        for payload in payloads:
            _log(f"ablate: training variant {payload[0]}")
            rows.append(_run_variant(payload))
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=_ABLATION_COLUMNS)
    writer.writeheader()
    writer.writerows(rows)
    text = buffer.getvalue()
    sys.stdout.write(text)
    with open(os.path.join(out_dir, "ablation.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return 0


def cmd_count_params(args):
    run_config = load_run_config(args.config)
    tt.set_default_dtype(run_config.precision)
    if args.features is not None:
        num_features = args.features
    else:
        num_features = run_config.resolve_data().values.shape[1]
    model_config = run_config.build_model_config(num_features)
    model = TSRM(model_config, seed=run_config.seed, force_ranges=args.force_ranges)
    print(count_parameters(model))
    return 0


def _ratio_list(text):
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratio list {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tsrm",
        description="Train, evaluate, and explain time series representation models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit a model from a run config")
    p_train.add_argument("--config", required=True, help="run config JSON path")
    p_train.add_argument("--out", help="output directory (overrides config out_dir)")
    p_train.add_argument("--seed", type=int, help="override the config seed")
    p_train.add_argument(
        "--force-ranges",
        action="store_true",
        help="allow hyperparameters outside the tuned search space",
    )
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score checkpoints on a split")
    p_eval.add_argument(
        "--checkpoint",
        action="append",
        required=True,
        help="checkpoint path; repeat for multi-horizon tables",
    )
    p_eval.add_argument("--split", default="test", choices=("train", "val", "test"))
    p_eval.add_argument(
        "--ratios",
        type=_ratio_list,
        help="comma-separated missing ratios for imputation checkpoints",
    )
    p_eval.add_argument("--out", help="directory to write eval.csv into")
    p_eval.set_defaults(func=cmd_eval)

    p_explain = sub.add_parser("explain", help="export an attention report for one window")
    p_explain.add_argument("--checkpoint", required=True)
    p_explain.add_argument("--split", default="test", choices=("train", "val", "test"))
    p_explain.add_argument("--window", type=int, default=0, help="window index in the split")
    p_explain.add_argument("--threshold", type=float, default=0.85)
    p_explain.add_argument("--out", help="output directory (default: checkpoint directory)")
    p_explain.set_defaults(func=cmd_explain)

    p_ablate = sub.add_parser("ablate", help="train and compare config variants")
    p_ablate.add_argument("--config", required=True)
    p_ablate.add_argument(
        "--variants",
        default="n_sweep,no_merge,r1,r0",
        help="comma-separated subset of n_sweep,no_merge,r1,r0",
    )
    p_ablate.add_argument("--out", help="output directory (overrides config out_dir)")
    p_ablate.add_argument("--seed", type=int, help="override the config seed")
    p_ablate.add_argument("--jobs", type=int, default=1, help="parallel variant runs")
    p_ablate.add_argument("--force-ranges", action="store_true")
    p_ablate.set_defaults(func=cmd_ablate)

    p_count = sub.add_parser("count-params", help="print the trainable parameter count")
    p_count.add_argument("--config", required=True)
    p_count.add_argument(
        "--features",
        type=int,
        help="channel count override; skips loading the dataset",
    )
    p_count.add_argument("--force-ranges", action="store_true")
    p_count.set_defaults(func=cmd_count_params)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
