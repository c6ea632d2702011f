"""Walkthrough: the executable compute cost model.

The reduction unit shrinks the data stream by r every k blocks, so the
per-block attention cost decays geometrically. The closed form predicts
the measured FLOP ratio of an instrumented forward pass.
"""

import causax as cx
from causax import perf
from causax.model import ModelConfig

# Closed form at the reference configuration (B=10, k=2, r=2):
sample, node = cx.analytic_cost_ratio(10, 2, 2)
print(f"reference config: sample-axis {sample:.6%} of baseline, node-axis {node:.4%}")
assert (sample, node) == (0.26640625, 0.3875)

# The schedule behind those numbers, including the tail discard at 125 -> 62:
lengths, discards = cx.reduction_schedule(1000, B=10, k=2, r=2)
print(f"stream lengths after each reduction at m=1000: {lengths} ({discards} tail discard)")

# Instrumented forward: count attention FLOPs per block on a desk-size config.
cfg = ModelConfig(B=4, k=2, r=2, d=16, H=4)
col, report = perf.measure_forward(cfg, m=128, n=8, seed=0)
print("\nper-block sample-axis attention FLOPs:")
for row in report.measured_flops_per_block:
    print(f"  block {row['block']}: {row['sample_map_flops']:>12,}")

# Measured vs analytic ratio (r | m at every boundary, so the match is exact).
measured_sample, measured_node = perf.measured_cost_ratio(cfg, m=128, n=8)
a_sample, a_node = cx.analytic_cost_ratio(cfg.B, cfg.k, cfg.r)
print(f"\nsample-axis ratio: measured {measured_sample:.8f} vs analytic {a_sample:.8f}")
print(f"node-axis ratio:   measured {measured_node:.8f} vs analytic {a_node:.8f}")

# Attention cost is quadratic in the stream length: doubling m quadruples it.
cfg1 = ModelConfig(B=2, k=1, r=1, d=16, H=4)
flops = []
for m in (64, 128, 256):
    c, _ = perf.measure_forward(cfg1, m=m, n=8, seed=0)
    flops.append(c.total_map_flops("sample"))
print(f"\nsample-axis FLOPs at m=64/128/256: {flops[0]:,} / {flops[1]:,} / {flops[2]:,}")
print(f"ratios: {flops[1] / flops[0]:.1f}x, {flops[2] / flops[1]:.1f}x")
