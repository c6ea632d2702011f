"""Compute and memory cost accounting.

Holds the closed-form cost model for the reduction schedule, runtime FLOP
counters fed by the attention kernels, attention-map memory tracking, and
a small wallclock benchmark harness. Counters live on a per-session
collector; when no collector is active the recording hooks are no-ops.
"""

from __future__ import annotations

import statistics
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

_state = threading.local()


class Collector:
    """Per-session tallies of FLOPs and attention-map allocations.

    FLOP buckets are keyed by (block index, stream tag); ``map_flops``
    holds the two attention-term matmuls (logits and weighted sum),
    ``proj_flops`` everything else (QKV/output projections, FFNs).
    """

    def __init__(self):
        self.map_flops: dict[tuple[int, str], int] = {}
        self.proj_flops: dict[tuple[int, str], int] = {}
        self.attention_map_peak = 0
        self.attention_map_calls: list[int] = []
        self.reduced_lengths: list[int] = []
        self.block = -1

    def total_map_flops(self, tag: str) -> int:
        return sum(v for (_, t), v in self.map_flops.items() if t == tag)

    def per_block_map_flops(self, tag: str) -> dict[int, int]:
        out: dict[int, int] = {}
        for (b, t), v in self.map_flops.items():
            if t == tag:
                out[b] = out.get(b, 0) + v
        return out

    def total_flops(self) -> int:
        return sum(self.map_flops.values()) + sum(self.proj_flops.values())


def current() -> Collector | None:
    return getattr(_state, "collector", None)


class collect:
    """Context manager installing a fresh Collector for the block."""

    def __enter__(self) -> Collector:
        self._prev = current()
        self.collector = Collector()
        _state.collector = self.collector
        return self.collector

    def __exit__(self, *exc):
        _state.collector = self._prev
        return False


def set_block(b: int) -> None:
    col = current()
    if col is not None:
        col.block = b


def record_map_flops(tag: str, flops: int) -> None:
    col = current()
    if col is not None:
        key = (col.block, tag)
        col.map_flops[key] = col.map_flops.get(key, 0) + flops


def record_proj_flops(tag: str, flops: int) -> None:
    col = current()
    if col is not None:
        key = (col.block, tag)
        col.proj_flops[key] = col.proj_flops.get(key, 0) + flops


def record_attention_map(floats: int) -> None:
    col = current()
    if col is not None:
        col.attention_map_calls.append(floats)
        if floats > col.attention_map_peak:
            col.attention_map_peak = floats


def record_reduction(new_length: int) -> None:
    col = current()
    if col is not None:
        col.reduced_lengths.append(new_length)


# -- closed-form cost model -----------------------------------------------


def analytic_cost_ratio(B: int, k: int, r: int) -> tuple[float, float]:
    """Average per-block compute relative to the no-reduction baseline.

    sample_ratio = (1/B) * sum_b r^(-2*floor(b/k))   (quadratic axis)
    node_ratio   = (1/B) * sum_b r^(-floor(b/k))     (linear axis)

    Evaluated exactly over rationals before the final float conversion.
    """
    if B < 1 or k < 1 or r < 1:
        raise ValueError(f"B, k, r must all be >= 1, got ({B}, {k}, {r})")
    sample = sum(Fraction(1, r ** (2 * (b // k))) for b in range(B))
    node = sum(Fraction(1, r ** (b // k)) for b in range(B))
    return float(sample / B), float(node / B)


def reduction_schedule(m: int, B: int, k: int, r: int) -> tuple[list[int], int]:
    """Data-stream lengths after each reduction, plus the tail-discard count."""
    lengths: list[int] = []
    discards = 0
    cur = m
    for b in range(B):
        if r > 1 and (b + 1) % k == 0 and (b + 1) < B and cur >= r:
            kept = r * (cur // r)
            if kept != cur:
                discards += 1
            cur = kept // r
            lengths.append(cur)
    return lengths, discards


@dataclass
class CostReport:
    """Analytic and measured cost figures for one configuration."""

    analytic_sample_ratio: float
    analytic_node_ratio: float
    measured_flops_per_block: list[dict]
    peak_attention_floats: int
    wallclock_s: float
    config: dict = field(default_factory=dict)


# -- measured costs ----------------------------------------------------------


def _random_inputs(m: int, n: int, seed: int):
    from .simulator import Dataset, GraphPrior, standardize

    rng = np.random.default_rng(seed)
    raw = Dataset(D=rng.standard_normal((m, n)), I=np.zeros((m, n), dtype=np.uint8))
    ds = standardize(raw)
    rho = rng.standard_normal((n, n))
    rho = (rho + rho.T) / 2.0
    return ds, GraphPrior(rho=rho)


def measure_forward(config, m: int, n: int, seed: int = 0) -> tuple[Collector, CostReport]:
    """Instrumented forward pass on synthetic inputs with random weights."""
    from . import model
    from .tensor import no_grad

    ds, prior = _random_inputs(m, n, seed)
    params = model.init_params(config, seed + 1)
    with collect() as col:
        t0 = time.perf_counter()
        with no_grad():
            model.forward(ds, prior, config, params)
        wall = time.perf_counter() - t0
    sample_ratio, node_ratio = analytic_cost_ratio(config.B, config.k, config.r)
    per_block = []
    for b in range(config.B):
        per_block.append({
            "block": b,
            "sample_map_flops": col.map_flops.get((b, "sample"), 0),
            "node_map_flops": col.map_flops.get((b, "node"), 0),
            "graph_map_flops": col.map_flops.get((b, "graph"), 0),
            "proj_flops": sum(v for (bb, _), v in col.proj_flops.items() if bb == b),
        })
    report = CostReport(
        analytic_sample_ratio=sample_ratio,
        analytic_node_ratio=node_ratio,
        measured_flops_per_block=per_block,
        peak_attention_floats=col.attention_map_peak,
        wallclock_s=wall,
        config={"B": config.B, "k": config.k, "r": config.r, "m": m, "n": n,
                "d": config.d, "H": config.H},
    )
    return col, report


def measured_cost_ratio(config, m: int, n: int, seed: int = 0) -> tuple[float, float]:
    """Measured sample/node attention-FLOP ratios vs the r=1 baseline."""
    import dataclasses

    col, _ = measure_forward(config, m, n, seed)
    baseline_cfg = dataclasses.replace(config, r=1)
    base, _ = measure_forward(baseline_cfg, m, n, seed)
    sample = col.total_map_flops("sample") / base.total_map_flops("sample")
    node = col.total_map_flops("node") / base.total_map_flops("node")
    return sample, node


def measure_attention_memory(config, R: int, C: int, seed: int = 0) -> dict[str, int]:
    """Peak attention-map floats for one tied call and one vanilla call.

    Tied storage is H*C*C independent of R; the vanilla reference keeps a
    map per row, R*H*C*C.
    """
    from . import model
    from .tensor import Tensor, no_grad

    rng = np.random.default_rng(seed)
    params = model.attention_params(config.d, rng, prefix="probe")
    x = Tensor(rng.standard_normal((R, C, config.d)))
    out = {}
    with collect() as col:
        with no_grad():
            model.tied_attention(x, params, "probe", config, tag="probe")
    out["tied"] = col.attention_map_peak
    with collect() as col:
        with no_grad():
            model.vanilla_attention(x, params, "probe", config, tag="probe")
    out["vanilla"] = col.attention_map_peak
    return out


def bench(rows: list[dict], repeats: int = 5, warmup: int = 1, seed: int = 0) -> list[dict]:
    """Median-of-``repeats`` forward wallclock per configuration row.

    Each row needs m, n, B, k, r, d, H; optional ``attention`` selects
    "tied" (default) or "vanilla".
    """
    from . import model
    from .tensor import no_grad

    results = []
    for row in rows:
        cfg = model.ModelConfig(
            B=int(row["B"]), k=int(row["k"]), r=int(row["r"]),
            d=int(row["d"]), H=int(row["H"]),
            vanilla_attention=row.get("attention", "tied") == "vanilla",
        )
        m, n = int(row["m"]), int(row["n"])
        ds, prior = _random_inputs(m, n, seed)
        params = model.init_params(cfg, seed + 1)
        times = []
        peak = 0
        for it in range(warmup + repeats):
            with collect() as col:
                t0 = time.perf_counter()
                with no_grad():
                    model.forward(ds, prior, cfg, params)
                elapsed = time.perf_counter() - t0
            if it >= warmup:
                times.append(elapsed)
                peak = max(peak, col.attention_map_peak)
        results.append({
            **{k: row[k] for k in ("m", "n", "B", "k", "r", "d", "H")},
            "attention": row.get("attention", "tied"),
            "median_s": statistics.median(times),
            "peak_attention_floats": peak,
        })
    return results
