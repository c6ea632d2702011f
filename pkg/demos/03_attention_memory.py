"""Walkthrough: why tied attention weights save memory.

Standard axial attention keeps one map per row: R x H x C x C floats.
Tying the weights sums the logits over the rows, so a single H x C x C
map serves all of them; the peak no longer grows with R.
"""

import math

import numpy as np

from causax import model, perf
from causax.model import ModelConfig
from causax.tensor import Tensor

cfg = ModelConfig(B=1, k=1, r=1, d=16, H=4)
C = 12

print(f"H={cfg.H}, C={C}: tied map should hold H*C^2 = {cfg.H * C * C} floats\n")
print(f"{'R':>6} {'tied':>10} {'vanilla':>10} {'vanilla/tied':>13}")
for R in (1, 16, 256):
    out = perf.measure_attention_memory(cfg, R=R, C=C)
    print(f"{R:>6} {out['tied']:>10,} {out['vanilla']:>10,} {out['vanilla'] / out['tied']:>12.0f}x")

# With a single row, the tied sum collapses to standard attention. Compare
# against an independent per-head reference.
rng = np.random.default_rng(0)
params = model.attention_params(cfg.d, rng, "probe")
x = rng.standard_normal((1, C, cfg.d))
tied = model.tied_attention(Tensor(x), params, "probe", cfg).data[0]

dh = cfg.d_head
q, k, v = (x[0] @ params[f"probe.{w}"].data for w in ("wq", "wk", "wv"))
heads = []
for h in range(cfg.H):
    qs, ks, vs = (z[:, h * dh:(h + 1) * dh] for z in (q, k, v))
    logits = qs @ ks.T / math.sqrt(dh)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    heads.append((e / e.sum(axis=1, keepdims=True)) @ vs)
reference = np.concatenate(heads, axis=1) @ params["probe.wo"].data + params["probe.bo"].data

print(f"\nR=1 tied vs standard multi-head attention: max |diff| = "
      f"{np.abs(tied - reference).max():.2e}")
