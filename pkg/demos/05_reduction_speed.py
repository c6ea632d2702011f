"""Walkthrough: wallclock effect of the reduction unit and tied attention.

Benchmarks forward passes with and without sample reduction, and tied vs
per-row (vanilla) attention maps. Absolute numbers are machine-specific;
the orderings are the point.
"""

from causax import perf

base = {"m": 512, "n": 24, "B": 4, "k": 2, "d": 16, "H": 4}

rows = [
    {**base, "r": 1},
    {**base, "r": 2},
    {**base, "r": 1, "attention": "vanilla"},
]
results = perf.bench(rows, repeats=5, warmup=1)

print(f"{'config':>28} {'median forward':>15} {'peak attn floats':>17}")
for row in results:
    label = f"r={row['r']}, {row['attention']} attention"
    print(f"{label:>28} {row['median_s'] * 1000:>12.0f} ms {row['peak_attention_floats']:>17,}")

r1, r2, vanilla = (row["median_s"] for row in results)
print(f"\nreduction speedup (r=2 vs r=1): {r1 / r2:.2f}x")
print(f"tied speedup vs vanilla at r=1: {vanilla / r1:.2f}x "
      f"(memory: {results[2]['peak_attention_floats'] / results[0]['peak_attention_floats']:.0f}x smaller maps)")
