"""Acceptance criteria, one test per criterion.

Each test prints a [acceptance] PASS/FAIL line via the conftest hook. The
suite is fully seeded; the slowest criterion is the desk-scale training
run (criterion 9).
"""

import math
import statistics
import time

import numpy as np
import pytest

import causax as cx
from causax import metrics, model, perf, simulator, training
from causax import tensor as T
from causax.model import ModelConfig
from causax.tensor import Tensor

from conftest import gradcheck
from test_metrics import all_dags, random_dag
from test_model import model_finite_difference_check, reference_mha
from test_tensor import _PRIMITIVES


def test_criterion_01_analytic_cost_ratios_exact():
    assert perf.analytic_cost_ratio(10, 2, 2) == (0.26640625, 0.3875)


def test_criterion_02_measured_flops_match_analytic():
    # paper-scale reference configuration; m=512 divides exactly at every
    # reduction boundary, so the measured ratio is exact up to counting
    cfg = ModelConfig(B=10, k=2, r=2, d=128, H=16)
    sample, node = perf.measured_cost_ratio(cfg, m=512, n=20, seed=0)
    assert abs(sample - 0.26640625) / 0.26640625 < 0.01
    assert abs(node - 0.3875) / 0.3875 < 0.01


def test_criterion_03_tied_attention_memory_law():
    cfg = ModelConfig(B=1, k=1, r=1, d=64, H=16)
    C = 20
    tied_peaks = []
    for R in (1, 16, 256):
        out = perf.measure_attention_memory(cfg, R=R, C=C)
        tied_peaks.append(out["tied"])
        assert out["tied"] == cfg.H * C * C  # exact, not asymptotic
        assert out["vanilla"] == R * cfg.H * C * C
    rs = np.array([1, 16, 256], dtype=float)
    slope = np.polyfit(rs, np.array(tied_peaks, dtype=float), 1)[0]
    assert len(set(tied_peaks)) == 1 and abs(slope) < 1e-12


def test_criterion_04_tied_equals_standard_at_single_row():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        H = int(rng.choice([1, 2, 4]))
        dh = int(rng.choice([2, 4, 8]))
        d = H * dh
        C = int(rng.integers(2, 9))
        cfg = ModelConfig(B=1, k=1, r=1, d=d, H=H)
        params = model.attention_params(d, rng, "probe")
        x = rng.standard_normal((1, C, d))
        tied = model.tied_attention(Tensor(x), params, "probe", cfg).data[0]
        ref = reference_mha(x[0], *(params[f"probe.{w}"].data
                                    for w in ("wq", "wk", "wv", "wo", "bo")), H)
        worst = max(worst, float(np.abs(tied - ref).max()))
    assert worst < 1e-10


def test_criterion_05_gradient_integrity():
    # every primitive op over 20 seeds
    for name, build in _PRIMITIVES.items():
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            a = rng.standard_normal((4, 3))
            b = rng.standard_normal((3, 5)) if name == "matmul" else rng.standard_normal((4, 3))
            if name == "relu":
                a = a + np.sign(a) * 0.05
            worst = max(worst, gradcheck(build, [a, b], cot_seed=seed))
        assert worst < 1e-4, f"{name}: {worst:.3g}"

    # full model below the 5k-parameter bound, every coordinate
    cfg = ModelConfig(B=2, k=1, r=2, d=4, H=2, ffn_mult=2)
    assert model.param_count(model.init_params(cfg, 0)) <= 5000
    err = model_finite_difference_check(cfg, m=6, n=3, stride=1)
    assert err < 1e-3


def test_criterion_06_reduction_schedule():
    lengths, discards = perf.reduction_schedule(1000, B=10, k=2, r=2)
    assert lengths == [500, 250, 125, 62]
    assert discards == 1
    # the instrumented forward realizes the same schedule
    cfg = ModelConfig(B=10, k=2, r=2, d=8, H=2, ffn_mult=2)
    col, _ = perf.measure_forward(cfg, m=1000, n=3, seed=0)
    assert col.reduced_lengths == [500, 250, 125, 62]


def test_criterion_07_no_two_cycles_over_1000_draws():
    cfg = ModelConfig(B=1, k=1, r=1, d=8, H=2)
    rng = np.random.default_rng(7)
    base = model.init_params(cfg, 0)
    head_keys = [k for k in base if k.startswith("head.")]
    for draw in range(1000):
        params = dict(base)
        for key in head_keys:
            scale = 60.0 if key.startswith(("head.w",)) else 1.0
            params[key] = Tensor(rng.standard_normal(base[key].shape) * 0.5 * scale)
        h = Tensor(rng.standard_normal((6, 6, cfg.d)) * 2)
        decoded = model.predict_head(h, params, cfg).decode(0.5)
        assert not (decoded & decoded.T).any()
        assert decoded.diagonal().sum() == 0


def test_criterion_08_metric_oracles_agree():
    rng = np.random.default_rng(88)
    # exhaustive over every DAG with n <= 4
    for n in (2, 3, 4):
        dags = list(all_dags(n))
        prev = dags[-1]
        for truth in dags:
            scores = rng.random((n, n))
            np.fill_diagonal(scores, 0)
            assert metrics.shd(prev, truth) == metrics.shd_reference(prev, truth)
            for fast, ref in (
                (metrics.average_precision(scores, truth),
                 metrics.average_precision_reference(scores, truth)),
                (metrics.auc(scores, truth), metrics.auc_reference(scores, truth)),
                (metrics.orientation_accuracy(scores, truth),
                 metrics.orientation_accuracy_reference(scores, truth)),
            ):
                assert (fast is None and ref is None) or abs(fast - ref) < 1e-12
            prev = truth
    # 100 random n=8 instances
    for _ in range(100):
        truth = random_dag(8, rng)
        pred = random_dag(8, rng)
        scores = rng.random((8, 8))
        np.fill_diagonal(scores, 0)
        assert metrics.shd(pred, truth) == metrics.shd_reference(pred, truth)
        assert abs(metrics.average_precision(scores, truth)
                   - metrics.average_precision_reference(scores, truth)) < 1e-12
        assert abs(metrics.auc(scores, truth) - metrics.auc_reference(scores, truth)) < 1e-12
        assert abs(metrics.orientation_accuracy(scores, truth)
                   - metrics.orientation_accuracy_reference(scores, truth)) < 1e-12


def _learning_corpus(count, seed0, m=400):
    pairs = []
    for i in range(count):
        n = 5 if i % 2 == 0 else 10
        g = cx.sample_graph("er", n, n, seed=seed0 + 3 * i)
        mech = cx.sample_mechanism(g, "linear", seed=seed0 + 3 * i + 1)
        ds = cx.sample_dataset(g, mech, m, seed=seed0 + 3 * i + 2)
        pairs.append((ds, g))
    return training.prepare_items(pairs)


def test_criterion_09_desk_scale_learning_signal():
    # Table-1 full-scale reproduction is out of reach on a CPU; this is the
    # substituted property check: the trained model must clear AUC 0.85 and
    # beat the inverse-covariance baseline's average precision on held-out
    # graphs.
    train_items = _learning_corpus(200, 0)
    val_items = _learning_corpus(20, 900_000)

    inv_maps = [metrics.average_precision(metrics.invcov_baseline(it.dataset)[0], it.truth)
                for it in val_items]
    invcov_map = float(np.mean(inv_maps))

    cfg = ModelConfig(B=4, k=2, r=2, d=32, H=4)
    tcfg = training.TrainConfig(lr=3e-4, batch_size=1, steps=600, seed=0,
                                eval_every=200)
    result = training.train(train_items, val_items, cfg, tcfg)

    val_map, val_auc = training.evaluate_items(result.params, cfg, val_items)
    print(f"\n  held-out: model mAP={val_map:.3f} AUC={val_auc:.3f} "
          f"vs INVCOV mAP={invcov_map:.3f}")
    assert val_auc >= 0.85
    assert val_map > invcov_map


def test_criterion_10_invcov_chain_zero_pattern():
    wins = 0
    adj = np.zeros((3, 3), dtype=np.int8)
    adj[0, 1] = adj[1, 2] = 1
    graph = simulator.CausalGraph(n=3, adjacency=adj, family="er")
    for seed in range(100):
        mech = cx.sample_mechanism(graph, "linear", seed=seed)
        ds = cx.sample_dataset(graph, mech, 100_000, interventional_fraction=0.0,
                               seed=1000 + seed)
        scores, _ = metrics.invcov_baseline(cx.standardize(ds))
        if scores[0, 1] > scores[0, 2] and scores[1, 2] > scores[0, 2]:
            wins += 1
    assert wins >= 95


def test_criterion_11_reduction_makes_forward_faster():
    base = {"m": 1024, "n": 50, "B": 4, "k": 2, "d": 8, "H": 2}
    rows = [{**base, "r": 1}, {**base, "r": 2}]
    results = perf.bench(rows, repeats=5, warmup=1, seed=0)
    t_r1 = results[0]["median_s"]
    t_r2 = results[1]["median_s"]
    print(f"\n  median forward: r=1 {t_r1:.2f}s vs r=2 {t_r2:.2f}s")
    assert t_r2 < t_r1
