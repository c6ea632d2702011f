"""Supervised amortized training.

Each training example is a (dataset, prior, ground-truth graph) triple;
the loss is a three-state cross-entropy per unordered node pair. Batches
group datasets with equal node counts, so no padding is ever needed.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, model
from . import tensor as T
from .simulator import CausalGraph, Dataset, GraphPrior, compute_prior, standardize
from .tensor import Tensor, no_grad


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 1
    steps: int = 1000
    seed: int = 0
    eval_every: int = 100
    checkpoint_dir: str | None = None
    # optional up-weighting of edged pairs; off by default
    positive_pair_weight: float | None = None
    # global gradient-norm clip; None disables. Single-example batches have
    # heavy-tailed gradient noise that otherwise destabilizes Adam.
    max_grad_norm: float | None = 1.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float((p.grad ** 2).sum()) for p in params.values()
                          if p.grad is not None))
    if total > max_norm:
        scale = max_norm / total
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return total


class Adam:
    """Bias-corrected Adam (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, lr: float):
        self.lr = lr
        self.beta1 = 0.9
        self.beta2 = 0.999
        self.eps = 1e-8
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray] | None = None) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads.get(name) if grads is not None else p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise RuntimeError(f"non-finite gradient for parameter {name!r}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def pair_states(adjacency: np.ndarray) -> np.ndarray:
    """Map a DAG adjacency to per-pair targets: 0 none, 1 i->j, 2 j->i."""
    adjacency = np.asarray(adjacency)
    n = adjacency.shape[0]
    iu, ju = np.triu_indices(n, 1)
    fwd = adjacency[iu, ju]
    bwd = adjacency[ju, iu]
    both = (fwd == 1) & (bwd == 1)
    if both.any():
        i, j = iu[both][0], ju[both][0]
        raise ValueError(f"truth graph has a 2-cycle between {i} and {j}; no single pair state exists")
    return (fwd + 2 * bwd).astype(np.intp)


def pair_loss(pred: model.PredictedGraph, truth, positive_weight: float | None = None) -> Tensor:
    """Mean three-state cross-entropy over pairs {i < j}."""
    adjacency = truth.adjacency if isinstance(truth, CausalGraph) else np.asarray(truth)
    if adjacency.shape[0] != pred.n:
        raise ValueError(f"prediction has n={pred.n}, truth has n={adjacency.shape[0]}")
    states = pair_states(adjacency)
    onehot = np.eye(3)[states]
    lse = T.logsumexp(pred.logits, axis=-1)  # (P,)
    picked = T.tensor_sum(T.mul(pred.logits, onehot), axis=1)
    per_pair = T.sub(lse, picked)
    if positive_weight is None:
        return T.mean(per_pair)
    weights = np.where(states > 0, positive_weight, 1.0)
    return T.mul(T.tensor_sum(T.mul(per_pair, weights)), 1.0 / weights.sum())


@dataclass
class TrainItem:
    """One fully prepared example."""

    dataset: Dataset  # standardized
    prior: GraphPrior
    truth: np.ndarray

    @property
    def n(self) -> int:
        return self.dataset.n


def prepare_items(pairs: list[tuple[Dataset, CausalGraph]]) -> list[TrainItem]:
    """Standardize and attach the inverse-covariance prior to each example."""
    items = []
    for dataset, graph in pairs:
        ds = dataset if dataset.standardized else standardize(dataset)
        items.append(TrainItem(dataset=ds, prior=compute_prior(ds), truth=graph.adjacency))
    return items


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    log: list[dict] = field(default_factory=list)
    best_val_map: float = float("nan")
    best_step: int = -1


def evaluate_items(params: dict[str, Tensor], cfg: model.ModelConfig,
                   items: list[TrainItem]) -> tuple[float, float]:
    """Mean average precision and AUC of g_hat scores across items."""
    aps, aucs = [], []
    with no_grad():
        for item in items:
            pred = model.forward(item.dataset, item.prior, cfg, params)
            ap = metrics.average_precision(pred.g_hat, item.truth)
            au = metrics.auc(pred.g_hat, item.truth)
            if ap is not None:
                aps.append(ap)
            if au is not None:
                aucs.append(au)
    return (float(np.mean(aps)) if aps else float("nan"),
            float(np.mean(aucs)) if aucs else float("nan"))


def train(items: list[TrainItem], val_items: list[TrainItem],
          model_cfg: model.ModelConfig, train_cfg: TrainConfig) -> TrainResult:
    """Run the optimization loop; returns weights plus the metric log.

    Writes a best-by-validation-mAP checkpoint when a checkpoint_dir is
    configured. Fully deterministic given the seed.
    """
    if not items:
        raise ValueError("training corpus is empty")
    rng = np.random.default_rng(train_cfg.seed)
    params = model.init_params(model_cfg, train_cfg.seed)
    opt = Adam(train_cfg.lr)
    result = TrainResult(params=params)

    # equal-n batching: group the corpus by node count
    groups: dict[int, list[int]] = {}
    for idx, item in enumerate(items):
        groups.setdefault(item.n, []).append(idx)
    group_keys = sorted(groups)
    group_weights = np.array([len(groups[k]) for k in group_keys], dtype=float)
    group_weights /= group_weights.sum()

    t_start = time.perf_counter()
    best_map = -math.inf
    for step in range(train_cfg.steps):
        n_key = group_keys[rng.choice(len(group_keys), p=group_weights)]
        batch_idx = rng.choice(groups[n_key], size=min(train_cfg.batch_size, len(groups[n_key])),
                               replace=False)
        losses = []
        for idx in batch_idx:
            item = items[idx]
            pred = model.forward(item.dataset, item.prior, model_cfg, params,
                                 rng=rng if model_cfg.dropout > 0 else None)
            losses.append(pair_loss(pred, item.truth, train_cfg.positive_pair_weight))
        total = losses[0]
        for extra in losses[1:]:
            total = T.add(total, extra)
        total = T.mul(total, 1.0 / len(losses))

        for p in params.values():
            p.zero_grad()
        total.backward()
        if train_cfg.max_grad_norm is not None:
            clip_gradients(params, train_cfg.max_grad_norm)
        opt.step(params)

        row = {"step": step, "loss": float(total.data), "val_map": "", "val_auc": "",
               "wallclock_s": round(time.perf_counter() - t_start, 3)}
        if val_items and (step + 1) % train_cfg.eval_every == 0:
            val_map, val_auc = evaluate_items(params, model_cfg, val_items)
            row["val_map"], row["val_auc"] = val_map, val_auc
            if val_map > best_map:
                best_map = val_map
                result.best_val_map = val_map
                result.best_step = step
                if train_cfg.checkpoint_dir:
                    model.save_checkpoint(train_cfg.checkpoint_dir, model_cfg, params)
        result.log.append(row)

    if train_cfg.checkpoint_dir and result.best_step < 0:
        model.save_checkpoint(train_cfg.checkpoint_dir, model_cfg, params)
    return result


def write_metric_log(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["step", "loss", "val_map", "val_auc", "wallclock_s"])
        writer.writeheader()
        writer.writerows(rows)
