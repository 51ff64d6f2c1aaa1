import csv
import json

import numpy as np
import pytest

from tsrm.errors import ContractError, DimensionError
from tsrm.explain import (
    backmap_attention,
    build_report,
    collect_attention,
    report_from_forward,
    report_to_csv,
    report_to_json,
)
from tsrm.layers import conv1d_out_len
from tsrm.model import TSRM, ModelConfig
from tsrm.tensor import Tensor


def backmap_oracle(weights, specs, lookback):
    """Per-tap loop: each window's importance spreads 1/k to its taps."""
    importance = weights.mean(axis=0).mean(axis=0)
    timeline = np.zeros(lookback)
    offset = 0
    for spec in specs:
        d = conv1d_out_len(lookback, spec)
        block = importance[offset : offset + d]
        offset += d
        for pos in range(d):
            for tap in range(spec.kernel_size):
                t = pos * spec.stride + tap * spec.dilation
                timeline[t] += block[pos] / spec.kernel_size
    return timeline


def specs_for(lookback, conv_specs):
    return ModelConfig(
        lookback=lookback, horizon=1, num_features=1, conv_specs=conv_specs,
        num_convs=len(conv_specs),
    ).validate().build_conv_specs()


class TestCollect:
    def test_disabled_capture_rejected(self):
        with pytest.raises(ContractError):
            collect_attention(None)

    def test_detaches_tensors(self):
        maps = [Tensor(np.ones((1, 2, 2, 4, 4)), requires_grad=True)]
        out = collect_attention(maps)
        assert isinstance(out[0], np.ndarray)
        assert out[0].shape == (1, 2, 2, 4, 4)


class TestBackmap:
    @pytest.mark.parametrize(
        "lookback,conv_specs",
        [(24, [(3, 1), (5, 4)]), (96, [(3, 1), (5, 4), (8, 4)]), (16, [(4, 2)])],
    )
    def test_matches_loop_oracle(self, lookback, conv_specs):
        specs = specs_for(lookback, conv_specs)
        d_total = sum(conv1d_out_len(lookback, s) for s in specs)
        rng = np.random.default_rng(0)
        weights = rng.random((3, d_total, d_total))
        got = backmap_attention(weights, specs, lookback)
        np.testing.assert_allclose(got, backmap_oracle(weights, specs, lookback), atol=1e-12)

    def test_mass_conservation(self):
        specs = specs_for(96, [(3, 1), (5, 4), (8, 4)])
        d_total = sum(conv1d_out_len(96, s) for s in specs)
        rng = np.random.default_rng(1)
        weights = rng.random((4, d_total, d_total))
        timeline = backmap_attention(weights, specs, 96)
        importance = weights.mean(axis=0).mean(axis=0)
        assert abs(timeline.sum() - importance.sum()) <= 1e-8

    def test_padding_tail_stays_zero(self):
        # kernel 8 dilation 4 stride 8 on 96 covers 93 steps; the rest is pad
        specs = specs_for(96, [(8, 4, 8)])
        d = conv1d_out_len(96, specs[0])
        assert d == 9
        weights = np.ones((2, d, d))
        timeline = backmap_attention(weights, specs, 96)
        natural = (d - 1) * 8 + 4 * 7 + 1
        assert natural == 93
        np.testing.assert_array_equal(timeline[natural:], 0.0)
        assert timeline[:natural].sum() > 0

    def test_per_head_mean_equals_combined(self):
        specs = specs_for(24, [(3, 1), (5, 4)])
        d_total = sum(conv1d_out_len(24, s) for s in specs)
        weights = np.random.default_rng(2).random((5, d_total, d_total))
        per_head = backmap_attention(weights, specs, 24, per_head=True)
        assert per_head.shape == (5, 24)
        combined = backmap_attention(weights, specs, 24)
        np.testing.assert_allclose(per_head.mean(axis=0), combined, atol=1e-12)

    def test_rejects_non_square(self):
        specs = specs_for(24, [(3, 1)])
        with pytest.raises(DimensionError):
            backmap_attention(np.ones((2, 4, 5)), specs, 24)

    def test_rejects_block_length_mismatch(self):
        specs = specs_for(24, [(3, 1)])
        with pytest.raises(DimensionError, match="sum of conv block lengths"):
            backmap_attention(np.ones((2, 4, 4)), specs, 24)


class TestBuildReport:
    def test_normalization_bounds(self):
        rng = np.random.default_rng(3)
        stack = rng.random((3, 2, 16))
        report = build_report(stack)
        assert report.timelines.shape == (3, 2, 16)
        for n in range(3):
            for f in range(2):
                assert report.timelines[n, f].min() == 0.0
                assert report.timelines[n, f].max() == 1.0
        for f in range(2):
            assert report.combined[f].min() == 0.0
            assert report.combined[f].max() == 1.0

    def test_constant_timeline_is_zeroed(self):
        stack = np.ones((2, 1, 8))
        report = build_report(stack)
        np.testing.assert_array_equal(report.timelines, 0.0)
        np.testing.assert_array_equal(report.combined, 0.0)
        assert report.highlights == [[]]

    def test_threshold_selects_indices(self):
        stack = np.zeros((1, 1, 4))
        stack[0, 0] = [0.0, 1.0, 9.0, 10.0]
        report = build_report(stack, threshold=0.85)
        assert report.highlights == [[2, 3]]
        assert build_report(stack, threshold=0.05).highlights == [[1, 2, 3]]

    def test_bad_rank(self):
        with pytest.raises(DimensionError):
            build_report(np.zeros((2, 8)))


@pytest.fixture(scope="module")
def model_and_maps():
    cfg = ModelConfig(
        lookback=24, horizon=8, num_features=2, num_layers=2,
        num_heads=2, embed_dim=16, num_convs=2, dropout=0.0,
    ).validate()
    model = TSRM(cfg, seed=0)
    x = np.random.default_rng(4).standard_normal((3, 24, 2))
    _, maps = model.forward(x, return_attention=True)
    return cfg, model, maps


class TestReportFromForward:
    def test_report_shapes(self, model_and_maps):
        cfg, model, maps = model_and_maps
        report = report_from_forward(maps, cfg.build_conv_specs(), cfg.lookback)
        assert report.num_layers == 2
        assert report.timelines.shape == (2, 2, 24)
        assert report.combined.shape == (2, 24)
        assert report.threshold == 0.85
        assert report.raw_shapes == [[3, 2, 2, 10, 10], [3, 2, 2, 10, 10]]
        assert any(report.highlights[f] for f in range(2))
        assert all(len(report.highlights[f]) < 24 for f in range(2))

    def test_deterministic(self, model_and_maps):
        cfg, model, maps = model_and_maps
        a = report_from_forward(maps, cfg.build_conv_specs(), cfg.lookback)
        b = report_from_forward(maps, cfg.build_conv_specs(), cfg.lookback)
        np.testing.assert_array_equal(a.timelines, b.timelines)
        np.testing.assert_array_equal(a.combined, b.combined)
        assert a.highlights == b.highlights

    def test_batch_index_selects_window(self, model_and_maps):
        cfg, model, maps = model_and_maps
        a = report_from_forward(maps, cfg.build_conv_specs(), cfg.lookback, batch_index=0)
        b = report_from_forward(maps, cfg.build_conv_specs(), cfg.lookback, batch_index=1)
        assert not np.array_equal(a.combined, b.combined)

    def test_simplex_mass_reaches_timeline(self, model_and_maps):
        # attention rows sum to one, so each layer/feature timeline carries
        # unit mass before normalization
        cfg, model, maps = model_and_maps
        for arr in collect_attention(maps):
            timeline = backmap_attention(arr[0, 0], cfg.build_conv_specs(), cfg.lookback)
            assert abs(timeline.sum() - 1.0) <= 1e-8

    def test_layerless_model_rejected(self):
        cfg = ModelConfig(
            lookback=24, horizon=8, num_features=1, num_layers=0,
            num_heads=2, embed_dim=16, num_convs=2,
        ).validate()
        model = TSRM(cfg, seed=0)
        _, maps = model.forward(np.zeros((24, 1)), return_attention=True)
        with pytest.raises(ContractError):
            report_from_forward(maps, cfg.build_conv_specs(), cfg.lookback)


class TestSerialization:
    def small_report(self):
        stack = np.random.default_rng(5).random((2, 2, 8))
        return build_report(stack, raw_shapes=[[1, 2, 2, 4, 4]] * 2)

    def test_json_keys_and_file(self, tmp_path):
        report = self.small_report()
        path = tmp_path / "attn.json"
        text = report_to_json(report, str(path))
        data = json.loads(text)
        assert list(data) == [
            "threshold", "num_layers", "raw_attention_shapes",
            "timelines", "combined", "highlights",
        ]
        assert data["num_layers"] == 2
        assert json.loads(path.read_text()) == data

    def test_csv_layout(self, tmp_path):
        report = self.small_report()
        path = tmp_path / "attn.csv"
        values = np.random.default_rng(6).standard_normal((8, 2))
        report_to_csv(report, str(path), values=values)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == [
            "feature", "t", "value", "score_el0", "score_el1", "combined", "highlighted"
        ]
        assert len(rows) == 1 + 2 * 8
        for row in rows[1:]:
            f, t = int(row[0]), int(row[1])
            assert float(row[2]) == values[t, f]
            assert int(row[6]) == int(t in report.highlights[f])
