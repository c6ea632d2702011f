"""Cost model: analytic ratios, FLOP counters, memory law, benchmarks."""

from fractions import Fraction

import numpy as np
import pytest

from causax import perf
from causax.model import ModelConfig
from causax.perf import analytic_cost_ratio, measure_attention_memory, reduction_schedule


class TestAnalyticCostRatio:
    def test_reference_config_exact(self):
        assert analytic_cost_ratio(10, 2, 2) == (0.26640625, 0.3875)

    def test_no_reduction_is_full_cost(self):
        assert analytic_cost_ratio(7, 3, 1) == (1.0, 1.0)

    def test_small_config_direct_sum(self):
        sample, node = analytic_cost_ratio(4, 2, 2)
        assert sample == (1 + 1 + 0.25 + 0.25) / 4
        assert node == (1 + 1 + 0.5 + 0.5) / 4

    def test_invalid_arguments_rejected(self):
        with pytest.raises(ValueError):
            analytic_cost_ratio(0, 1, 2)

    def test_geometric_series_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            k = int(rng.integers(1, 5))
            B = k * int(rng.integers(1, 6))
            r = int(rng.integers(1, 5))
            lhs = sum(Fraction(1, r ** (b // k)) for b in range(B))
            rhs = k * sum(Fraction(1, r ** i) for i in range(B // k))
            assert lhs == rhs
            lhs2 = sum(Fraction(1, r ** (2 * (b // k))) for b in range(B))
            rhs2 = k * sum(Fraction(1, r ** (2 * i)) for i in range(B // k))
            assert lhs2 == rhs2


class TestReductionSchedule:
    def test_reference_lengths_with_one_discard(self):
        lengths, discards = reduction_schedule(1000, 10, 2, 2)
        assert lengths == [500, 250, 125, 62]
        assert discards == 1

    def test_r_one_never_reduces(self):
        lengths, discards = reduction_schedule(1000, 10, 2, 1)
        assert lengths == [] and discards == 0

    def test_exact_divisibility_no_discards(self):
        lengths, discards = reduction_schedule(512, 10, 2, 2)
        assert lengths == [256, 128, 64, 32]
        assert discards == 0


class TestCountFlops:
    def test_r1_blocks_report_equal_sample_flops(self):
        cfg = ModelConfig(B=3, k=1, r=1, d=8, H=2, ffn_mult=2)
        col, report = perf.measure_forward(cfg, m=32, n=4, seed=0)
        per_block = [row["sample_map_flops"] for row in report.measured_flops_per_block]
        assert len(set(per_block)) == 1 and per_block[0] > 0

    def test_quadratic_scaling_in_m(self):
        cfg = ModelConfig(B=2, k=1, r=1, d=8, H=2, ffn_mult=2)
        totals = []
        for m in (64, 128, 256):
            col, _ = perf.measure_forward(cfg, m=m, n=4, seed=0)
            totals.append(col.total_map_flops("sample"))
        assert totals[1] == 4 * totals[0]
        assert totals[2] == 4 * totals[1]

    def test_measured_ratio_matches_analytic_exact_divisibility(self):
        cfg = ModelConfig(B=4, k=2, r=2, d=8, H=2, ffn_mult=2)
        sample, node = perf.measured_cost_ratio(cfg, m=64, n=5, seed=1)
        a_sample, a_node = analytic_cost_ratio(4, 2, 2)
        assert abs(sample - a_sample) < 1e-12
        assert abs(node - a_node) < 1e-12

    def test_measured_ratio_with_discards_within_tolerance(self):
        cfg = ModelConfig(B=6, k=2, r=2, d=8, H=2, ffn_mult=2)
        sample, _ = perf.measured_cost_ratio(cfg, m=250, n=5, seed=2)  # 250 -> 125 -> 62 -> 31
        a_sample, _ = analytic_cost_ratio(6, 2, 2)
        assert abs(sample - a_sample) / a_sample < 0.03


class TestAttentionMemory:
    def test_tied_peak_is_h_c_squared_invariant_in_r(self):
        cfg = ModelConfig(B=1, k=1, r=1, d=8, H=2)
        for R in (1, 10, 1000):
            out = measure_attention_memory(cfg, R=R, C=5)
            assert out["tied"] == 2 * 5 * 5

    def test_vanilla_scales_with_r(self):
        cfg = ModelConfig(B=1, k=1, r=1, d=8, H=2)
        out = measure_attention_memory(cfg, R=10, C=5)
        assert out["vanilla"] == 10 * out["tied"]

    def test_zero_slope_over_r_sweep(self):
        cfg = ModelConfig(B=1, k=1, r=1, d=8, H=2)
        rs = np.array([1, 4, 16, 64])
        peaks = np.array([measure_attention_memory(cfg, R=int(R), C=6)["tied"] for R in rs])
        assert len(set(peaks.tolist())) == 1
        slope = np.polyfit(rs, peaks, 1)[0]  # least-squares noise only
        assert abs(slope) < 1e-12

    def test_forward_peak_matches_largest_axis(self):
        cfg = ModelConfig(B=2, k=2, r=2, d=8, H=2, ffn_mult=2)
        col, report = perf.measure_forward(cfg, m=40, n=4, seed=3)
        assert report.peak_attention_floats == cfg.H * 40 * 40


class TestBench:
    def test_row_count_and_fields(self):
        rows = [
            {"m": 32, "n": 4, "B": 1, "k": 1, "r": 1, "d": 8, "H": 2},
            {"m": 32, "n": 4, "B": 1, "k": 1, "r": 1, "d": 8, "H": 2, "attention": "vanilla"},
        ]
        results = perf.bench(rows, repeats=2, warmup=0)
        assert len(results) == 2
        assert all(r["median_s"] > 0 for r in results)
        # peak is the sample-axis map (C=m); vanilla keeps one per tied row (R=n)
        assert results[0]["peak_attention_floats"] == 2 * 32 * 32
        assert results[1]["peak_attention_floats"] == 4 * results[0]["peak_attention_floats"]
