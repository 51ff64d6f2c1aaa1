"""Model architecture: stacked encoding layers between an embedding and a
flatten head, wrapped in reversible instance normalization.

Data layout inside the backbone is [batch, feature, length, embed_dim]; the
shared weights are applied to every feature channel independently unless the
inter-feature-correlation (ifc) variant is enabled, whose second middle block
mixes channels jointly.

Residual wiring per encoding layer:

    R       = representation(E_in) + prev_residual
    M       = middle_blocks(R)
    res_out = M + prev_residual
    E_out   = merge(res_out)

with prev_residual = 0 for the first layer. This is the one place the
cross-layer residual semantics live; change it here if they need revision.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ConfigError, ContractError, DataError, DimensionError
from .layers import (
    Conv1D,
    Conv1DSpec,
    Layer,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    RevIN,
    TransposedConv1D,
    conv1d_out_len,
    dropout,
    positional_encoding,
)
from .tensor import Tensor

_ALLOWED_HEADS = (2, 4, 8, 16, 32)
_ALLOWED_DIMS = (8, 16, 32, 64, 128)
_MAX_LAYERS = 12
_MAX_CONVS = 4
_KERNEL_LADDER = (3, 5, 8, 12)


def default_conv_specs(lookback, count=3):
    """Kernel/dilation ladder: smallest kernel 3 undilated, receptive fields
    ramping geometrically up to roughly 65% of the lookback window."""
    if not 1 <= count <= _MAX_CONVS:
        raise ConfigError(f"conv count must be in [1, {_MAX_CONVS}], got {count}")
    if lookback < 3:
        raise ConfigError(f"lookback {lookback} too short for the default conv ladder")
    top = max(3, round(0.65 * lookback))
    targets = np.geomspace(3, top, count)
    specs = []
    for kernel, target in zip(_KERNEL_LADDER, targets):
        kernel = min(kernel, lookback)
        if kernel == 1:
            specs.append((1, 1))
            continue
        dilation = max(1, round((target - 1) / (kernel - 1)))
        dilation = min(dilation, (lookback - 1) // (kernel - 1))
        specs.append((int(kernel), int(dilation)))
    return specs


@dataclass
class ModelConfig:
    """Hyperparameters of one model instance.

    ``conv_specs`` entries are (kernel_size, dilation) or (kernel_size,
    dilation, stride); stride defaults to the kernel size. ``None`` selects
    the default ladder of ``num_convs`` specs.
    """

    lookback: int
    horizon: int
    num_features: int
    num_layers: int = 2
    num_heads: int = 8
    embed_dim: int = 64
    conv_specs: list = None
    num_convs: int = None
    attention: str = "vanilla"
    ifc: bool = False
    merge_trainable: bool = True
    dropout: float = 0.1
    conv_groups: int = 1

    def validate(self, force_ranges=False):
        if self.lookback < 1 or self.horizon < 1 or self.num_features < 1:
            raise ConfigError(
                f"lookback, horizon, num_features must be >= 1, got "
                f"({self.lookback}, {self.horizon}, {self.num_features})"
            )
        if self.num_layers < 0:
            raise ConfigError(f"num_layers must be >= 0, got {self.num_layers}")
        if self.attention not in ("vanilla", "entmax15"):
            raise ConfigError(f"attention must be vanilla or entmax15, got {self.attention!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.embed_dim % self.num_heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} must be divisible by num_heads {self.num_heads}"
            )
        if self.conv_specs is None:
            self.conv_specs = default_conv_specs(self.lookback, self.num_convs or 3)
        self.conv_specs = [tuple(int(v) for v in spec) for spec in self.conv_specs]
        if self.num_convs is None:
            self.num_convs = len(self.conv_specs)
        elif self.num_convs != len(self.conv_specs):
            raise ConfigError(
                f"num_convs={self.num_convs} but {len(self.conv_specs)} conv_specs given"
            )
        if len(self.conv_specs) < 1:
            raise ConfigError("at least one conv spec is required")
        for spec in self.build_conv_specs():
            conv1d_out_len(self.lookback, spec)  # raises if the field does not fit
        if not force_ranges:
            if self.num_layers > _MAX_LAYERS:
                raise ConfigError(
                    f"num_layers {self.num_layers} outside [0, {_MAX_LAYERS}] "
                    f"(use force_ranges to override)"
                )
            if self.num_heads not in _ALLOWED_HEADS:
                raise ConfigError(
                    f"num_heads {self.num_heads} not in {_ALLOWED_HEADS} "
                    f"(use force_ranges to override)"
                )
            if self.embed_dim not in _ALLOWED_DIMS:
                raise ConfigError(
                    f"embed_dim {self.embed_dim} not in {_ALLOWED_DIMS} "
                    f"(use force_ranges to override)"
                )
            if len(self.conv_specs) > _MAX_CONVS:
                raise ConfigError(
                    f"{len(self.conv_specs)} conv specs exceed the maximum of {_MAX_CONVS} "
                    f"(use force_ranges to override)"
                )
        return self

    def build_conv_specs(self):
        specs = []
        for entry in self.conv_specs:
            kernel, dilation = entry[0], entry[1]
            stride = entry[2] if len(entry) > 2 else None
            specs.append(
                Conv1DSpec(
                    kernel_size=kernel,
                    dilation=dilation,
                    stride=stride,
                    groups=self.conv_groups,
                    in_channels=self.embed_dim,
                    out_channels=self.embed_dim,
                )
            )
        return specs

    def block_lengths(self):
        return [conv1d_out_len(self.lookback, spec) for spec in self.build_conv_specs()]

    def repr_length(self):
        return sum(self.block_lengths())

    def to_dict(self):
        return {
            "lookback": self.lookback,
            "horizon": self.horizon,
            "num_features": self.num_features,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "embed_dim": self.embed_dim,
            "conv_specs": [list(s) for s in self.conv_specs] if self.conv_specs else None,
            "num_convs": self.num_convs,
            "attention": self.attention,
            "ifc": self.ifc,
            "merge_trainable": self.merge_trainable,
            "dropout": self.dropout,
            "conv_groups": self.conv_groups,
        }

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


class EncodingLayer(Layer):
    """Representation convs -> attention + feedforward blocks -> merge."""

    def __init__(self, config, rng):
        self.config = config
        d = config.embed_dim
        specs = config.build_conv_specs()
        self.convs = [Conv1D(spec, rng) for spec in specs]
        self.norm1 = LayerNorm(d)
        self.attention = MultiHeadAttention(d, config.num_heads, config.attention, rng)
        self.norm2 = LayerNorm(d)
        width = config.num_features * d if config.ifc else d
        self.block2 = Linear(width, width, rng)
        self.deconvs = [TransposedConv1D(spec, rng) for spec in specs]
        self.merge_proj = Linear(d * len(specs), d, rng)
        self.block_sizes = [conv1d_out_len(config.lookback, spec) for spec in specs]
        if not config.merge_trainable:
            for layer in self.deconvs:
                layer.freeze()
            self.merge_proj.freeze()

    def named_parameters(self):
        pairs = []
        for j, conv in enumerate(self.convs):
            pairs += [(f"conv{j}.{n}", p) for n, p in conv.parameters()]
        pairs += [(f"norm1.{n}", p) for n, p in self.norm1.parameters()]
        pairs += [(f"attention.{n}", p) for n, p in self.attention.parameters()]
        pairs += [(f"norm2.{n}", p) for n, p in self.norm2.parameters()]
        pairs += [(f"block2.{n}", p) for n, p in self.block2.parameters()]
        for j, deconv in enumerate(self.deconvs):
            pairs += [(f"deconv{j}.{n}", p) for n, p in deconv.parameters()]
        pairs += [(f"merge.{n}", p) for n, p in self.merge_proj.parameters()]
        return pairs

    def parameters(self):
        return self.named_parameters()

    def representation(self, e):
        """K parallel convs concatenated along the sequence axis."""
        return tt.concat([conv(e) for conv in self.convs], axis=-2)

    def middle(self, r, training=False, rng=None):
        """Two pre-activation residual blocks; returns (output, attention)."""
        t = tt.gelu(self.norm1(r))
        t, weights = self.attention(t)
        r = r + dropout(t, self.config.dropout, training, rng)
        t = tt.gelu(self.norm2(r))
        if self.config.ifc:
            f = self.config.num_features
            if r.ndim < 3 or r.shape[-3] != f:
                raise ContractError(
                    f"ifc middle block needs all {f} feature channels at axis -3, got shape {r.shape}"
                )
            t = t.swapaxes(-3, -2)  # [..., D, F, d]
            flat_shape = t.shape[:-2] + (f * self.config.embed_dim,)
            t = tt.reshape(t, flat_shape)
            t = self.block2(t)
            t = tt.reshape(t, flat_shape[:-1] + (f, self.config.embed_dim))
            t = t.swapaxes(-3, -2)
        else:
            t = self.block2(t)
        r = r + dropout(t, self.config.dropout, training, rng)
        return r, weights

    def merge(self, r):
        """Split into per-conv blocks, re-expand each to the lookback length,
        concatenate on the feature axis, and project back to embed_dim."""
        parts = tt.split(r, self.block_sizes, axis=-2)
        expanded = [
            deconv(part, output_len=self.config.lookback)
            for deconv, part in zip(self.deconvs, parts)
        ]
        return self.merge_proj(tt.concat(expanded, axis=-1))

    def forward(self, e_in, prev_residual=None, training=False, rng=None):
        r = self.representation(e_in)
        if prev_residual is not None:
            r = r + prev_residual
        m, weights = self.middle(r, training=training, rng=rng)
        residual_out = m if prev_residual is None else m + prev_residual
        e_out = self.merge(residual_out)
        return e_out, residual_out, weights

    __call__ = forward


class TSRM(Layer):
    """Channel-independent encoder with per-instance normalization.

    ``forward`` accepts [T, F] or [B, T, F] input (numpy or Tensor) and
    returns predictions of shape [H, F] or [B, H, F]. ``mask`` (same leading
    shape, 1 = masked) only informs the normalization statistics; sentinel
    substitution happens upstream.
    """

    def __init__(self, config, seed=0, force_ranges=False):
        config.validate(force_ranges=force_ranges)
        self.config = config
        rng = np.random.default_rng(seed)
        d = config.embed_dim
        self.embed = Linear(1, d, rng)
        self.revin = RevIN(config.num_features)
        self.pos = positional_encoding(config.lookback, d)
        self.encoding_layers = [EncodingLayer(config, rng) for _ in range(config.num_layers)]
        self.head = Linear(config.lookback * d, config.horizon, rng)

    def named_parameters(self):
        pairs = [(f"embed.{n}", p) for n, p in self.embed.parameters()]
        pairs += [(f"revin.{n}", p) for n, p in self.revin.parameters()]
        for i, el in enumerate(self.encoding_layers):
            pairs += [(f"layers.{i}.{n}", p) for n, p in el.named_parameters()]
        pairs += [(f"head.{n}", p) for n, p in self.head.parameters()]
        return pairs

    def parameters(self):
        return self.named_parameters()

    def _check_input(self, x, mask):
        data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=tt.get_default_dtype())
        if data.ndim == 2:
            data = data[None]
            batched = False
        elif data.ndim == 3:
            batched = True
        else:
            raise DimensionError(f"input must be [T, F] or [B, T, F], got shape {data.shape}")
        t, f = self.config.lookback, self.config.num_features
        if data.shape[-2:] != (t, f):
            raise DimensionError(
                f"input window shape {data.shape[-2:]} != (lookback, features) = ({t}, {f})"
            )
        if not np.all(np.isfinite(data)):
            raise DataError("input contains NaN or Inf; substitute sentinels before the model")
        if mask is not None:
            mask = np.asarray(mask, dtype=np.float64)
            if mask.ndim == 2:
                mask = mask[None]
            if mask.shape != data.shape:
                raise DimensionError(f"mask shape {mask.shape} != input shape {data.shape}")
        return data, mask, batched

    def forward(self, x, mask=None, training=False, rng=None, return_attention=False):
        data, mask, batched = self._check_input(x, mask)
        cfg = self.config
        series = tt.transpose(Tensor(data), (0, 2, 1))  # [B, F, T]
        observed = None if mask is None else np.transpose(1.0 - mask, (0, 2, 1))
        stats = self.revin.compute_stats(series, observed=observed)

        e = self.embed(tt.reshape(series, series.shape + (1,)))  # [B, F, T, d]
        e = e + self.pos
        mu = tt.reshape(stats.mu, stats.mu.shape + (1,))
        sigma = tt.reshape(stats.sigma, stats.sigma.shape + (1,))
        gamma = tt.reshape(self.revin.gamma, (cfg.num_features, 1, 1))
        beta = tt.reshape(self.revin.beta, (cfg.num_features, 1, 1))
        e = (e - mu) / sigma * gamma + beta

        residual = None
        attention_maps = []
        for el in self.encoding_layers:
            e, residual, weights = el(e, residual, training=training, rng=rng)
            attention_maps.append(weights)

        flat = tt.reshape(e, e.shape[:-2] + (cfg.lookback * cfg.embed_dim,))
        out = self.head(flat)  # [B, F, H]
        gamma2 = tt.reshape(self.revin.gamma, (cfg.num_features, 1))
        beta2 = tt.reshape(self.revin.beta, (cfg.num_features, 1))
        y = (out - beta2) / gamma2 * stats.sigma + stats.mu
        y = tt.transpose(y, (0, 2, 1))  # [B, H, F]
        if not batched:
            y = tt.reshape(y, y.shape[1:])
        return y, (attention_maps if return_attention else None)

    __call__ = forward


def count_parameters(model):
    """Number of trainable scalar parameters."""
    return sum(p.size for _, p in model.named_parameters() if p.requires_grad)


_MAGIC = b"TSRMCK01"
_FORMAT_VERSION = 1


def save_checkpoint(path, model, extra=None):
    """Self-describing binary: magic, JSON header (config, parameter table),
    then raw little-endian parameter payloads in header order."""
    params = model.named_parameters()
    header = {
        "format_version": _FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "extra": extra or {},
        "params": [
            {"name": n, "shape": list(p.data.shape), "dtype": p.data.dtype.name}
            for n, p in params
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, p in params:
            arr = np.ascontiguousarray(p.data).astype(p.data.dtype.newbyteorder("<"))
            fh.write(arr.tobytes())


def load_checkpoint(path, seed=0):
    """Rebuild the model a checkpoint describes and restore its parameters.

    Returns (model, extra) where ``extra`` is the free-form dict stored at
    save time (training provenance, dataset reference, ...).
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DataError(f"{path} is not a model checkpoint (bad magic)")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != _FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint format version {header.get('format_version')}")
        config = ModelConfig.from_dict(header["model_config"])
        model = TSRM(config, seed=seed, force_ranges=True)
        have = dict(model.named_parameters())
        listed = [entry["name"] for entry in header["params"]]
        if sorted(listed) != sorted(have):
            raise ConfigError("checkpoint parameter table does not match the configured model")
        for entry in header["params"]:
            p = have[entry["name"]]
            if list(p.data.shape) != entry["shape"]:
                raise ConfigError(
                    f"checkpoint shape {entry['shape']} != model shape {list(p.data.shape)} "
                    f"for {entry['name']}"
                )
            dtype = np.dtype(entry["dtype"]).newbyteorder("<")
            raw = fh.read(int(np.prod(entry["shape"], dtype=np.int64)) * dtype.itemsize)
            arr = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"])
            p.data = np.ascontiguousarray(arr, dtype=np.dtype(entry["dtype"]))
    return model, header.get("extra", {})
