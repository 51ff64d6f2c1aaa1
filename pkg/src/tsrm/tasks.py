"""Task objectives, mask generation, and evaluation metrics.

Both losses are the sum of an L1 and a squared-L2 term over the error,
normalized per cell; for a batch of windows the batch mean is taken (the
fused sum divided by batch * per-window cell count is identical). The
imputation loss keeps the missing-ratio weighting exactly as specified:
the masked term is divided by ratio * F * T and the combination multiplies
it by 1/ratio again; ``single_ratio_weighting=True`` applies the ratio
weighting only once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor

MASK_SENTINEL = -1.0


@dataclass
class MaskSet:
    """A binary imputation mask (1 = masked) with its target ratio."""

    mask: np.ndarray
    ratio: float
    seed: int = None

    @property
    def n_masked(self):
        return int(self.mask.sum())


def generate_mask(lookback, num_features, ratio, rng):
    """Uniform cell-level mask hitting round(T*F*ratio) cells exactly."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"missing ratio must be in (0, 1), got {ratio}")
    seed = None
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    total = lookback * num_features
    n_masked = int(round(total * ratio))
    flat = np.zeros(total, dtype=np.int8)
    chosen = rng.choice(total, size=n_masked, replace=False)
    flat[chosen] = 1
    return MaskSet(mask=flat.reshape(lookback, num_features), ratio=ratio, seed=seed)


def apply_mask(x, mask, sentinel=MASK_SENTINEL):
    """Replace masked cells with the sentinel; unmasked cells untouched."""
    m = mask.mask if isinstance(mask, MaskSet) else np.asarray(mask)
    arr = x.numpy() if isinstance(x, Tensor) else np.array(x, copy=True)
    if m.shape != arr.shape:
        raise DimensionError(f"mask shape {m.shape} != input shape {arr.shape}")
    arr[m.astype(bool)] = sentinel
    return arr


def _as_pair(yhat, y):
    yhat = yhat if isinstance(yhat, Tensor) else tt.tensor(yhat)
    y = y if isinstance(y, Tensor) else tt.tensor(np.asarray(y), dtype=yhat.data.dtype)
    if yhat.shape != y.shape:
        raise DimensionError(f"prediction shape {yhat.shape} != target shape {y.shape}")
    return yhat, y


def forecast_loss(yhat, y):
    """Per-cell L1 plus squared L2 of the forecast error.

    Accepts [H, F] or [B, H, F]; the batch dimension averages.
    """
    yhat, y = _as_pair(yhat, y)
    err = yhat - y
    cells = err.size
    return (err.abs().sum() + (err * err).sum()) / float(cells)


def imputation_loss(yhat, y, mask, ratio, single_ratio_weighting=False):
    """Masked and unmasked reconstruction terms combined with ratio weights.

    ``mask`` is a MaskSet or binary array matching the trailing [T, F] shape
    (broadcast over a leading batch axis). The default combination is
    (1/ratio) * L_m + L_u with L_m itself already carrying a 1/(ratio*F*T)
    prefactor; the switch collapses the two ratio factors into one.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"missing ratio must be in (0, 1), got {ratio}")
    yhat, y = _as_pair(yhat, y)
    m = mask.mask if isinstance(mask, MaskSet) else np.asarray(mask)
    m = m.astype(yhat.data.dtype)
    if m.shape != yhat.shape:
        if m.shape != yhat.shape[-m.ndim:]:
            raise DimensionError(f"mask shape {m.shape} incompatible with {yhat.shape}")
        m = np.broadcast_to(m, yhat.shape)
    batch = int(np.prod(yhat.shape[:-2])) if yhat.ndim > 2 else 1
    per_window = yhat.shape[-2] * yhat.shape[-1]
    masked = Tensor(np.ascontiguousarray(m), dtype=yhat.data.dtype)
    unmasked = Tensor(np.ascontiguousarray(1.0 - m), dtype=yhat.data.dtype)
    err = yhat - y
    abs_err = err.abs()
    sq_err = err * err
    loss_masked = ((abs_err * masked).sum() + (sq_err * masked).sum()) / float(
        ratio * per_window * batch
    )
    loss_unmasked = ((abs_err * unmasked).sum() + (sq_err * unmasked).sum()) / float(
        (1.0 - ratio) * per_window * batch
    )
    if single_ratio_weighting:
        return loss_masked + loss_unmasked
    return loss_masked * (1.0 / ratio) + loss_unmasked


@dataclass
class EvalRecord:
    """One evaluation result row.

    Serialized field order (CSV header and JSON key order):
    split, horizon_or_ratio, mse, mae, epoch, config_hash.
    """

    mse: float
    mae: float
    split: str = "test"
    horizon_or_ratio: object = None
    epoch: int = None
    config_hash: str = None

    CSV_FIELDS = ("split", "horizon_or_ratio", "mse", "mae", "epoch", "config_hash")

    def to_csv_row(self):
        return [
            self.split,
            "" if self.horizon_or_ratio is None else self.horizon_or_ratio,
            repr(float(self.mse)),
            repr(float(self.mae)),
            "" if self.epoch is None else self.epoch,
            self.config_hash or "",
        ]

    def to_json(self):
        return json.dumps(
            {
                "split": self.split,
                "horizon_or_ratio": self.horizon_or_ratio,
                "mse": float(self.mse),
                "mae": float(self.mae),
                "epoch": self.epoch,
                "config_hash": self.config_hash,
            }
        )


def metrics(yhat, y, mask=None, split="test", horizon_or_ratio=None, epoch=None, config_hash=None):
    """MSE/MAE over all cells, or over masked cells only when a mask is given."""
    yh = yhat.data if isinstance(yhat, Tensor) else np.asarray(yhat)
    yt = y.data if isinstance(y, Tensor) else np.asarray(y)
    if yh.shape != yt.shape:
        raise DimensionError(f"prediction shape {yh.shape} != target shape {yt.shape}")
    err = yh - yt
    if mask is not None:
        m = mask.mask if isinstance(mask, MaskSet) else np.asarray(mask)
        if m.shape != err.shape:
            m = np.broadcast_to(m, err.shape)
        sel = m.astype(bool)
        if not sel.any():
            raise ContractError("imputation metrics need at least one masked cell")
        err = err[sel]
    return EvalRecord(
        mse=float(np.mean(err * err)),
        mae=float(np.mean(np.abs(err))),
        split=split,
        horizon_or_ratio=horizon_or_ratio,
        epoch=epoch,
        config_hash=config_hash,
    )
