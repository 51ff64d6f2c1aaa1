"""Neural network building blocks on top of the tensor core.

Layers hold their parameters as ``Tensor``s and expose ``parameters()`` as an
explicit, deterministically ordered list of ``(name, tensor)`` pairs; forward
passes are pure functions of (input, parameters, rng). Weight matrices use
Kaiming-uniform init, biases start at zero, affine norms at one/zero.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor

_LN_EPS = 1e-5
_REVIN_EPS = 1e-5


def _kaiming_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Minimal parameter container; subclasses list parameters explicitly."""

    def parameters(self):
        raise NotImplementedError

    def trainable_parameters(self):
        return [(n, p) for n, p in self.parameters() if p.requires_grad]

    def freeze(self):
        for _, p in self.parameters():
            p.requires_grad = False


@dataclass(frozen=True)
class Conv1DSpec:
    """Geometry of one representation conv: kernel, dilation, stride, channels.

    The stride defaults to the kernel size, so windows tile the input without
    overlap; dilation widens the receptive field without extra parameters.
    """

    kernel_size: int
    dilation: int = 1
    stride: int = None
    groups: int = 1
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.stride is None:
            object.__setattr__(self, "stride", self.kernel_size)
        for field in ("kernel_size", "dilation", "stride", "groups", "in_channels", "out_channels"):
            if getattr(self, field) < 1:
                raise ConfigError(f"Conv1DSpec.{field} must be >= 1, got {getattr(self, field)}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"groups={self.groups} must divide in_channels={self.in_channels} "
                f"and out_channels={self.out_channels}"
            )

    @property
    def receptive_field(self):
        return self.dilation * (self.kernel_size - 1) + 1


def conv1d_out_len(length, spec):
    """Output length of a valid conv over ``length`` steps; errors if the
    receptive field does not fit."""
    if spec.receptive_field > length:
        raise ConfigError(
            f"receptive field {spec.receptive_field} exceeds input length {length} "
            f"(kernel_size={spec.kernel_size}, dilation={spec.dilation})"
        )
    return tt.conv_output_length(length, spec.kernel_size, spec.stride, spec.dilation)


class Conv1D(Layer):
    def __init__(self, spec, rng):
        self.spec = spec
        fan_in = (spec.in_channels // spec.groups) * spec.kernel_size
        self.weight = Tensor(
            _kaiming_uniform(rng, (spec.out_channels, spec.in_channels // spec.groups, spec.kernel_size), fan_in),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(spec.out_channels), requires_grad=True)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x):
        return tt.conv1d(
            x, self.weight, self.bias,
            stride=self.spec.stride, dilation=self.spec.dilation, groups=self.spec.groups,
        )

    __call__ = forward


class TransposedConv1D(Layer):
    """Adjoint convolution used by the merge layer to re-expand block rows."""

    def __init__(self, spec, rng):
        self.spec = spec
        fan_in = (spec.in_channels // spec.groups) * spec.kernel_size
        self.weight = Tensor(
            _kaiming_uniform(rng, (spec.in_channels, spec.out_channels // spec.groups, spec.kernel_size), fan_in),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(spec.out_channels), requires_grad=True)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x, output_len):
        return tt.conv_transpose1d(
            x, self.weight, self.bias,
            stride=self.spec.stride, dilation=self.spec.dilation,
            groups=self.spec.groups, output_len=output_len,
        )

    __call__ = forward


class Linear(Layer):
    def __init__(self, in_features, out_features, rng):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(
            _kaiming_uniform(rng, (in_features, out_features), in_features), requires_grad=True
        )
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise DimensionError(
                f"linear expects trailing dimension {self.in_features}, got shape {x.shape}"
            )
        if x.ndim == 1:
            return (tt.reshape(x, (1, -1)) @ self.weight + self.bias).reshape((self.out_features,))
        return x @ self.weight + self.bias

    __call__ = forward


class LayerNorm(Layer):
    """Normalization over the trailing feature axis with learnable affine."""

    def __init__(self, dim, eps=_LN_EPS):
        self.dim = dim
        self.eps = eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def forward(self, x):
        if x.shape[-1] != self.dim:
            raise DimensionError(f"layer norm over dim {self.dim}, got shape {x.shape}")
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered / tt.sqrt(var + self.eps)
        return normed * self.gamma + self.beta

    __call__ = forward


def dropout(x, p, training, rng=None):
    """Inverted dropout; identity (the same tensor) when not training."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return x * Tensor(keep, dtype=x.data.dtype)


class MultiHeadAttention(Layer):
    """Standard scaled dot-product attention with a pluggable row map.

    ``kind`` selects the normalization of each score row: "vanilla" softmax
    or the sparse "entmax15". Projections carry no bias. Returns both the
    output and the [..., heads, L, L] weight stack for explainability.
    """

    def __init__(self, embed_dim, num_heads, kind="vanilla", rng=None):
        if embed_dim % num_heads:
            raise ConfigError(f"embed_dim {embed_dim} not divisible by num_heads {num_heads}")
        if kind not in ("vanilla", "entmax15"):
            raise ConfigError(f"attention kind must be vanilla or entmax15, got {kind!r}")
        self.embed_dim = embed_dim
        self.num_heads = num_heads
        self.head_dim = embed_dim // num_heads
        self.kind = kind
        self.wq = Tensor(_kaiming_uniform(rng, (embed_dim, embed_dim), embed_dim), requires_grad=True)
        self.wk = Tensor(_kaiming_uniform(rng, (embed_dim, embed_dim), embed_dim), requires_grad=True)
        self.wv = Tensor(_kaiming_uniform(rng, (embed_dim, embed_dim), embed_dim), requires_grad=True)
        self.wo = Tensor(_kaiming_uniform(rng, (embed_dim, embed_dim), embed_dim), requires_grad=True)

    def parameters(self):
        return [("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)]

    def _split_heads(self, x):
        # [..., L, d] -> [..., h, L, d/h]
        target = x.shape[:-1] + (self.num_heads, self.head_dim)
        return tt.reshape(x, target).swapaxes(-3, -2)

    def forward(self, x):
        if x.shape[-1] != self.embed_dim:
            raise DimensionError(f"attention expects trailing dim {self.embed_dim}, got {x.shape}")
        q = self._split_heads(x @ self.wq)
        k = self._split_heads(x @ self.wk)
        v = self._split_heads(x @ self.wv)
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(self.head_dim))
        if self.kind == "vanilla":
            weights = tt.softmax(scores, axis=-1)
        else:
            weights = tt.entmax15(scores, axis=-1)
        context = weights @ v
        merged = context.swapaxes(-3, -2)
        merged = tt.reshape(merged, merged.shape[:-2] + (self.embed_dim,))
        return merged @ self.wo, weights

    __call__ = forward


@dataclass
class RevINStats:
    """Per-instance location/scale plus the all-masked fallback flag."""

    mu: Tensor
    sigma: Tensor
    all_masked: np.ndarray


class RevIN(Layer):
    """Reversible instance normalization over the trailing (time) axis.

    Statistics are per instance and per channel; ``observed`` (1 = real
    value, 0 = masked sentinel) excludes masked cells. Instances with no
    observed cells fall back to mu=0, sigma=1 and raise a warning flag.
    """

    def __init__(self, num_channels=1, eps=_REVIN_EPS):
        if num_channels < 1:
            raise ConfigError(f"num_channels must be >= 1, got {num_channels}")
        self.num_channels = num_channels
        self.eps = eps
        self.gamma = Tensor(np.ones(num_channels), requires_grad=True)
        self.beta = Tensor(np.zeros(num_channels), requires_grad=True)

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def compute_stats(self, x, observed=None):
        x = tt.tensor(x) if not isinstance(x, Tensor) else x
        if observed is None:
            mu = x.mean(axis=-1, keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=-1, keepdims=True)
            sigma = tt.sqrt(var + self.eps)
            all_masked = np.zeros(x.shape[:-1], dtype=bool)
            return RevINStats(mu, sigma, all_masked)
        obs = np.asarray(observed, dtype=x.data.dtype)
        if obs.shape != x.shape:
            raise DimensionError(f"observed mask shape {obs.shape} != input shape {x.shape}")
        count = obs.sum(axis=-1, keepdims=True)
        all_masked = count[..., 0] == 0
        if np.any(all_masked):
            warnings.warn("RevIN: instance with every value masked; using mu=0, sigma=1")
        safe_count = Tensor(np.maximum(count, 1.0), dtype=x.data.dtype)
        obs_t = Tensor(obs, dtype=x.data.dtype)
        mu = (x * obs_t).sum(axis=-1, keepdims=True) / safe_count
        centered = (x - mu) * obs_t
        var = (centered * centered).sum(axis=-1, keepdims=True) / safe_count
        sigma = tt.sqrt(var + self.eps)
        if np.any(all_masked):
            ok = Tensor((~all_masked[..., None]).astype(x.data.dtype))
            bad = Tensor(all_masked[..., None].astype(x.data.dtype))
            mu = mu * ok
            sigma = sigma * ok + bad
        return RevINStats(mu, sigma, all_masked)

    def _affine_shape(self, x):
        if self.num_channels == 1:
            return ()
        if x.ndim < 2 or x.shape[-2] != self.num_channels:
            raise DimensionError(
                f"expected channel axis of size {self.num_channels} at position -2, got shape {x.shape}"
            )
        return (self.num_channels, 1)

    def normalize(self, x, observed=None, stats=None):
        x = tt.tensor(x) if not isinstance(x, Tensor) else x
        if stats is None:
            stats = self.compute_stats(x, observed=observed)
        gamma, beta = self._affine(x)
        y = (x - stats.mu) / stats.sigma * gamma + beta
        return y, stats

    def _affine(self, x):
        shape = self._affine_shape(x)
        return tt.reshape(self.gamma, shape), tt.reshape(self.beta, shape)

    def denormalize(self, y, stats):
        y = tt.tensor(y) if not isinstance(y, Tensor) else y
        gamma, beta = self._affine(y)
        return (y - beta) / gamma * stats.sigma + stats.mu


def positional_encoding(length, dim):
    """Sinusoidal table [length, dim]: sin on even columns, cos on odd."""
    if dim % 2:
        raise ConfigError(f"positional encoding dim must be even, got {dim}")
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = np.power(10000.0, -np.arange(0, dim, 2, dtype=np.float64) / dim)[None, :]
    table = np.empty((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates)
    return Tensor(table)
