"""Shared test utilities: finite-difference oracles and result reporting."""

import sys

import numpy as np

from causax.tensor import Tensor
from causax import tensor as T


def numeric_grad(loss_fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued closure wrt x (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = loss_fn()
        x[idx] = orig - h
        fm = loss_fn()
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * h)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs difference normalized by the largest gradient magnitude."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def gradcheck(build, arrays, h: float = 1e-5, cot_seed: int = 0) -> float:
    """Compare tape gradients of sum(build(xs) * cotangent) against central
    finite differences for every input array; returns the worst rel error."""
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    out = build(*leaves)
    cot = np.random.default_rng(cot_seed).standard_normal(out.shape)
    loss = T.tensor_sum(T.mul(out, cot))
    loss.backward()

    def loss_value() -> float:
        return float((build(*leaves).data * cot).sum())

    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        numeric = numeric_grad(loss_value, leaf.data, h=h)
        worst = max(worst, rel_err(analytic, numeric))
    return worst


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        outcome = "PASS" if report.passed else ("FAIL" if report.failed else "SKIP")
        name = report.nodeid.split("::")[-1]
        sys.stdout.write(f"\n[acceptance] {name}: {outcome}\n")
        sys.stdout.flush()
