"""Training loop: Adam, plateau LR decay, 1%-threshold early stopping.

Determinism contract: one seeded generator drives shuffling, mask draws, and
dropout in a fixed order, so identical seed + config + 64-bit precision in a
single worker reproduces losses, history, and checkpoints to the last bit
(wall-clock seconds excepted). Validation masks for imputation come from a
separate fixed stream so the per-epoch validation metric is comparable
across epochs and reproducible at evaluation time.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .data import iter_minibatches, make_windows
from .errors import ConfigError, ContractError, NumericError
from .model import save_checkpoint
from .tasks import apply_mask, forecast_loss, generate_mask, imputation_loss, metrics

_VAL_MASK_STREAM = 9157
_HISTORY_COLUMNS = ("epoch", "train_loss", "val_mse", "val_mae", "lr", "seconds")


@dataclass
class TrainConfig:
    initial_lr: float = 1e-3
    batch_size: int = 8
    max_epochs: int = 20
    early_stop_threshold: float = 0.01
    early_stop_patience: int = 3
    plateau_patience: int = 2
    plateau_factor: float = 0.1
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = None
    single_ratio_weighting: bool = False

    def validate(self):
        if self.initial_lr < 0:
            raise ConfigError(f"initial_lr must be >= 0, got {self.initial_lr}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError(
                f"batch_size and max_epochs must be >= 1, got "
                f"({self.batch_size}, {self.max_epochs})"
            )
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError(f"plateau_factor must be in (0, 1), got {self.plateau_factor}")
        if not 0.0 <= self.early_stop_threshold < 1.0:
            raise ConfigError(
                f"early_stop_threshold must be in [0, 1), got {self.early_stop_threshold}"
            )
        return self

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrainState:
    """Mutable bookkeeping shared by the scheduler and early stopping."""

    current_lr: float
    epoch: int = 0
    best_val_mse: float = math.inf
    epochs_since_improvement: int = 0
    plateau_best: float = math.inf
    plateau_bad_epochs: int = 0
    nan_flagged: bool = False


class Adam:
    """Bias-corrected Adam over a fixed parameter list."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]

    def step(self):
        self.step_count += 1
        bias1 = 1.0 - self.beta1 ** self.step_count
        bias2 = 1.0 - self.beta2 ** self.step_count
        for (name, p), m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                raise ContractError(f"parameter {name} has no gradient; run backward first")
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None


def adam_step(optimizer):
    """One optimizer step (alias for :meth:`Adam.step`)."""
    optimizer.step()


def plateau_scheduler_step(state, val_mse, patience, factor):
    """Decay lr by ``factor`` after ``patience`` consecutive non-improving
    epochs (strict improvement resets the counter). Returns the new lr."""
    if val_mse < state.plateau_best:
        state.plateau_best = val_mse
        state.plateau_bad_epochs = 0
    else:
        state.plateau_bad_epochs += 1
        if state.plateau_bad_epochs >= patience:
            state.current_lr *= factor
            state.plateau_bad_epochs = 0
    return state.current_lr


def early_stop_check(state, val_mse, threshold, patience):
    """Improvement counts only when val_mse < best * (1 - threshold); NaN is
    a flagged non-improvement. Returns "continue" or "stop"."""
    if math.isnan(val_mse):
        state.nan_flagged = True
        improved = False
    else:
        improved = val_mse < state.best_val_mse * (1.0 - threshold)
    if improved:
        state.best_val_mse = val_mse
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
    return "stop" if state.epochs_since_improvement >= patience else "continue"


def global_grad_norm(params):
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return math.sqrt(total)


def clip_gradients(params, max_norm):
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for _, p in params:
            if p.grad is not None:
                p.grad *= scale
    return min(norm, max_norm)


def fixed_masks(count, lookback, num_features, ratio, seed):
    """Deterministic per-window masks for validation/evaluation."""
    rng = np.random.default_rng([seed, _VAL_MASK_STREAM])
    return [generate_mask(lookback, num_features, ratio, rng) for _ in range(count)]


def predict(model, inputs, batch_size, masks=None):
    """Batched no-tape forward over stacked [N, T, F] windows.

    For imputation, ``masks`` (list of MaskSet) is applied to the inputs and
    passed to the model for mask-aware normalization stats.
    """
    outputs = []
    for lo in range(0, inputs.shape[0], batch_size):
        chunk = inputs[lo : lo + batch_size]
        if masks is not None:
            mask_arr = np.stack([m.mask for m in masks[lo : lo + chunk.shape[0]]])
            x_in = np.stack([apply_mask(w, m) for w, m in zip(chunk, masks[lo:])])
            pred, _ = model.forward(x_in, mask=mask_arr)
        else:
            pred, _ = model.forward(chunk)
        outputs.append(pred.numpy())
    return np.concatenate(outputs, axis=0)


@dataclass
class TrainResult:
    history: list
    best_val_mse: float
    best_val_mae: float
    best_epoch: int
    stopped_early: bool
    state: TrainState
    history_path: str = None
    checkpoint_path: str = None


def _epoch_loss_diagnostics(epoch, batch_index, loss_value, lr, params):
    norms = {name: float(np.linalg.norm(p.grad)) for name, p in params if p.grad is not None}
    top = sorted(norms.items(), key=lambda kv: -kv[1])[:5]
    desc = ", ".join(f"{n}={v:.3e}" for n, v in top) or "no gradients yet"
    return (
        f"non-finite loss {loss_value} at epoch {epoch}, batch {batch_index} (lr={lr}); "
        f"largest grad norms: {desc}"
    )


def train(model, dataset, task, cfg, missing_ratio=None, out_dir=None, extra_meta=None, log=None):
    """Fit ``model`` on ``dataset`` and return the history plus best state.

    The best-validation parameters are restored into the model before
    returning and, when ``out_dir`` is given, written as ``model.ckpt``
    alongside ``history.csv``.
    """
    cfg.validate()
    if task not in ("forecast", "impute"):
        raise ConfigError(f"task must be forecast or impute, got {task!r}")
    if task == "impute":
        if missing_ratio is None:
            raise ConfigError("imputation training needs a missing ratio")
        if model.config.horizon != model.config.lookback:
            raise ConfigError(
                "imputation requires horizon == lookback "
                f"(got {model.config.horizon} != {model.config.lookback})"
            )
    mcfg = model.config
    train_windows = make_windows(dataset, "train", mcfg.lookback, mcfg.horizon, task=task)
    val_windows = make_windows(dataset, "val", mcfg.lookback, mcfg.horizon, task=task)
    val_masks = None
    if task == "impute":
        val_masks = fixed_masks(
            len(val_windows), mcfg.lookback, mcfg.num_features, missing_ratio, cfg.seed
        )

    rng = np.random.default_rng(cfg.seed)
    params = model.trainable_parameters()
    optimizer = Adam(params, cfg.initial_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    state = TrainState(current_lr=cfg.initial_lr)
    history = []
    best_snapshot = {name: p.data.copy() for name, p in model.named_parameters()}
    best_val_mse = math.inf
    best_val_mae = math.inf
    best_epoch = 0
    stopped_early = False

    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        state.epoch = epoch
        optimizer.lr = state.current_lr
        epoch_lr = state.current_lr
        batch_losses = []
        for batch_index, (xb, yb, _) in enumerate(
            iter_minibatches(train_windows, cfg.batch_size, rng=rng)
        ):
            if task == "impute":
                batch_masks = [
                    generate_mask(mcfg.lookback, mcfg.num_features, missing_ratio, rng)
                    for _ in range(xb.shape[0])
                ]
                mask_arr = np.stack([m.mask for m in batch_masks])
                x_in = np.stack([apply_mask(w, m) for w, m in zip(xb, batch_masks)])
            else:
                mask_arr = None
                x_in = xb
            with tt.Tape():
                pred, _ = model.forward(x_in, mask=mask_arr, training=True, rng=rng)
                if task == "forecast":
                    loss = forecast_loss(pred, yb)
                else:
                    loss = imputation_loss(
                        pred, yb, mask_arr, missing_ratio,
                        single_ratio_weighting=cfg.single_ratio_weighting,
                    )
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise NumericError(
                    _epoch_loss_diagnostics(epoch, batch_index, loss_value, epoch_lr, params)
                )
            loss.backward()
            if cfg.grad_clip is not None:
                clip_gradients(params, cfg.grad_clip)
            optimizer.step()
            optimizer.zero_grad()
            batch_losses.append(loss_value)

        preds = predict(model, val_windows.inputs, cfg.batch_size, masks=val_masks)
        if task == "impute":
            stacked = np.stack([m.mask for m in val_masks])
            record = metrics(preds, val_windows.targets, mask=stacked, split="val")
        else:
            record = metrics(preds, val_windows.targets, split="val")
        elapsed = time.perf_counter() - started
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(batch_losses)),
                "val_mse": record.mse,
                "val_mae": record.mae,
                "lr": epoch_lr,
                "seconds": elapsed,
            }
        )
        if log is not None:
            log(
                f"epoch {epoch}: train_loss={history[-1]['train_loss']:.6f} "
                f"val_mse={record.mse:.6f} val_mae={record.mae:.6f} lr={epoch_lr:.2e}"
            )
        if record.mse < best_val_mse:
            best_val_mse = record.mse
            best_val_mae = record.mae
            best_epoch = epoch
            best_snapshot = {name: p.data.copy() for name, p in model.named_parameters()}
        plateau_scheduler_step(state, record.mse, cfg.plateau_patience, cfg.plateau_factor)
        if early_stop_check(
            state, record.mse, cfg.early_stop_threshold, cfg.early_stop_patience
        ) == "stop":
            stopped_early = True
            break

    for name, p in model.named_parameters():
        p.data = best_snapshot[name].copy()

    result = TrainResult(
        history=history,
        best_val_mse=best_val_mse,
        best_val_mae=best_val_mae,
        best_epoch=best_epoch,
        stopped_early=stopped_early,
        state=state,
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        result.history_path = os.path.join(out_dir, "history.csv")
        write_history_csv(result.history_path, history)
        result.checkpoint_path = os.path.join(out_dir, "model.ckpt")
        meta = {
            "task": task,
            "missing_ratio": missing_ratio,
            "seed": cfg.seed,
            "best_epoch": best_epoch,
            "best_val_mse": best_val_mse,
            "train_config": cfg.to_dict(),
        }
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(result.checkpoint_path, model, extra=meta)
    return result


def write_history_csv(path, history):
    """History rows with full-precision floats (repr round-trips exactly)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(_HISTORY_COLUMNS) + "\n")
        for row in history:
            cells = [str(row["epoch"])] + [repr(float(row[c])) for c in _HISTORY_COLUMNS[1:]]
            fh.write(",".join(cells) + "\n")
