"""Attention back-mapping: project per-layer attention weights onto the
input timeline and export highlighted reports.

Each captured map [heads, D, D] is reduced to per-key importance (mean over
heads, then over the query axis), split into the per-conv blocks, and pushed
back through transposed convolutions whose kernels are fixed uniform weights
1/kernel_size. Unit column mass makes the mapping conservative: the timeline
sums to the importance vector's sum (padding receives nothing).

All functions are pure post-processing of detached arrays; running a report
twice on the same forward yields identical results.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .kernels import scatter_windows
from .layers import conv1d_out_len
from .tensor import Tensor


def collect_attention(attention_maps):
    """Detach per-layer attention stacks captured by a model forward.

    ``attention_maps`` is the second element of ``model.forward(...,
    return_attention=True)``; passing the ``None`` from a capture-disabled
    run is a contract error. Returns a list of [B, F, heads, D, D] arrays.
    """
    if attention_maps is None:
        raise ContractError(
            "attention capture was disabled; call forward(return_attention=True)"
        )
    collected = []
    for weights in attention_maps:
        arr = weights.numpy() if isinstance(weights, Tensor) else np.asarray(weights)
        collected.append(arr)
    return collected


def backmap_attention(weights, conv_specs, lookback, per_head=False):
    """Map one [heads, D, D] attention stack to a length-``lookback`` score
    timeline (or one per head with ``per_head=True``)."""
    weights = weights.numpy() if isinstance(weights, Tensor) else np.asarray(weights)
    if weights.ndim != 3 or weights.shape[-1] != weights.shape[-2]:
        raise DimensionError(f"expected [heads, D, D] attention weights, got {weights.shape}")
    block_lengths = [conv1d_out_len(lookback, spec) for spec in conv_specs]
    total = sum(block_lengths)
    if weights.shape[-1] != total:
        raise DimensionError(
            f"attention size {weights.shape[-1]} != sum of conv block lengths {total}"
        )
    if per_head:
        return np.stack(
            [_backmap_importance(w.mean(axis=0), conv_specs, block_lengths, lookback)
             for w in weights]
        )
    importance = weights.mean(axis=0).mean(axis=0)  # heads, then query rows
    return _backmap_importance(importance, conv_specs, block_lengths, lookback)


def _backmap_importance(importance, conv_specs, block_lengths, lookback):
    timeline = np.zeros(lookback, dtype=np.float64)
    offset = 0
    for spec, length in zip(conv_specs, block_lengths):
        block = importance[offset : offset + length]
        offset += length
        k = spec.kernel_size
        cols = np.repeat(block[None, :, None, None] / k, k, axis=2)  # [1, D_j, k, 1]
        natural = (length - 1) * spec.stride + spec.dilation * (k - 1) + 1
        spread = scatter_windows(np.ascontiguousarray(cols), spec.stride, spec.dilation, natural)
        timeline[:natural] += spread[0, :, 0]
    return timeline


def _minmax(x):
    lo, hi = float(x.min()), float(x.max())
    if hi - lo == 0.0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


@dataclass
class AttentionReport:
    """Normalized per-layer timelines plus the combined highlight map.

    ``timelines``: [num_layers, F, T] (each map min-max normalized, constant
    maps all-zero); ``combined``: [F, T] normalized sum over layers;
    ``highlights``: per feature, indices where combined >= threshold.
    """

    timelines: np.ndarray
    combined: np.ndarray
    highlights: list
    threshold: float
    raw_shapes: list

    @property
    def num_layers(self):
        return self.timelines.shape[0]


def build_report(per_layer_timelines, threshold=0.85, raw_shapes=None):
    """Normalize per-layer [F, T] timelines and threshold their sum."""
    stack = np.asarray(per_layer_timelines, dtype=np.float64)
    if stack.ndim != 3:
        raise DimensionError(f"expected [layers, features, T] timelines, got {stack.shape}")
    normalized = np.stack(
        [[_minmax(stack[n, f]) for f in range(stack.shape[1])] for n in range(stack.shape[0])]
    )
    combined = np.stack([_minmax(normalized[:, f].sum(axis=0)) for f in range(stack.shape[1])])
    highlights = [np.flatnonzero(combined[f] >= threshold).tolist() for f in range(stack.shape[1])]
    return AttentionReport(
        timelines=normalized,
        combined=combined,
        highlights=highlights,
        threshold=threshold,
        raw_shapes=raw_shapes or [],
    )


def report_from_forward(attention_maps, conv_specs, lookback, threshold=0.85, batch_index=0):
    """Full pipeline for one window: collect, back-map per layer and feature,
    and build the thresholded report."""
    collected = collect_attention(attention_maps)
    if not collected:
        raise ContractError("model has no encoding layers; nothing to report")
    raw_shapes = [list(arr.shape) for arr in collected]
    num_features = collected[0].shape[1]
    timelines = np.stack(
        [
            [
                backmap_attention(arr[batch_index, f], conv_specs, lookback)
                for f in range(num_features)
            ]
            for arr in collected
        ]
    )
    return build_report(timelines, threshold=threshold, raw_shapes=raw_shapes)


def report_to_json(report, path=None):
    payload = {
        "threshold": report.threshold,
        "num_layers": int(report.num_layers),
        "raw_attention_shapes": report.raw_shapes,
        "timelines": report.timelines.tolist(),
        "combined": report.combined.tolist(),
        "highlights": report.highlights,
    }
    text = json.dumps(payload, indent=2)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return text


def report_to_csv(report, path, values=None):
    """Flat per-feature rows: t, value, per-layer scores, combined, highlighted."""
    layers = report.num_layers
    features, length = report.combined.shape
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["feature", "t", "value"]
            + [f"score_el{n}" for n in range(layers)]
            + ["combined", "highlighted"]
        )
        for f in range(features):
            marked = set(report.highlights[f])
            for t in range(length):
                value = "" if values is None else repr(float(values[t, f]))
                writer.writerow(
                    [f, t, value]
                    + [repr(float(report.timelines[n, f, t])) for n in range(layers)]
                    + [repr(float(report.combined[f, t])), int(t in marked)]
                )
