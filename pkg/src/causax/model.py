"""Two-stream graph inference network.

A data stream (samples x nodes x d) and a graph stream (nodes x nodes x d)
are updated by B blocks. Each block runs a tied-axial-attention data layer,
distills an n x n relation message from the data stream (outer product of
two pooled node embeddings), and injects it into the graph stream. Every k
blocks a reduction unit chunk-averages the data stream by a factor of r.
A pairwise three-state head (no edge / forward / backward) reads the final
graph embedding, which makes 2-cycles structurally impossible at any
decoding threshold >= 0.5.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import perf
from . import tensor as T
from .serialize import load_tensors, save_tensors
from .simulator import Dataset, GraphPrior
from .tensor import ShapeError, Tensor

__version__ = "0.1.0"

logger = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    scale_by_tied_axis: divide attention logits by sqrt(R * d_head) (the
    tied-axis length enters the accumulated sum); set False for the plain
    1/sqrt(d_head) ablation. vanilla_attention enables the per-row
    reference kernel used only for benchmarking.
    """

    B: int = 4
    k: int = 2
    r: int = 2
    d: int = 32
    H: int = 4
    ffn_mult: int = 4
    dropout: float = 0.0
    scale_by_tied_axis: bool = True
    vanilla_attention: bool = False

    def __post_init__(self):
        if self.B < 1 or self.k < 1 or self.r < 1:
            raise ValueError(f"B, k, r must be >= 1, got ({self.B}, {self.k}, {self.r})")
        if self.d % self.H != 0:
            raise ValueError(f"embedding dim {self.d} not divisible by {self.H} heads")

    @property
    def d_head(self) -> int:
        return self.d // self.H


@dataclass
class Activations:
    """Stream state threaded through the blocks."""

    h_D: Tensor  # (m_b, n, d)
    h_G: Tensor  # (n, n, d)
    omega: Tensor | None = None  # latest (n, n) graph message


@dataclass
class PredictedGraph:
    """Per-pair three-state distributions and the derived edge-probability matrix."""

    n: int
    pairs: np.ndarray  # (P, 2) node indices with i < j
    logits: Tensor  # (P, 3) over {none, i->j, j->i}; differentiable
    probabilities: np.ndarray  # (P, 3) softmax of logits
    g_hat: np.ndarray  # (n, n), g_hat[i, j] = P(i -> j), zero diagonal

    def decode(self, threshold: float = 0.5) -> np.ndarray:
        return (self.g_hat > threshold).astype(np.int8)


# -- parameter construction --------------------------------------------------


def _trunc_normal(rng: np.random.Generator, shape, std: float | None = None) -> np.ndarray:
    """Normal(0, std) resampled until everything lies within 2 std.

    Weight matrices default to fan-in scaling (std = 1/sqrt(fan_in)); a
    fixed small std starves narrow models of gradient signal at init.
    """
    if std is None:
        fan_in = shape[0] if isinstance(shape, tuple) and len(shape) > 1 else int(np.prod(shape))
        std = 1.0 / math.sqrt(fan_in)
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2 * std
    return x


def _param(params: dict, name: str, value: np.ndarray) -> None:
    params[name] = Tensor(value, requires_grad=True)


def attention_params(d: int, rng: np.random.Generator, prefix: str, params: dict | None = None,
                     out_scale: float = 1.0) -> dict:
    """Q/K/V/output projection weights for one attention sublayer."""
    if params is None:
        params = {}
    for w in ("wq", "wk", "wv"):
        _param(params, f"{prefix}.{w}", _trunc_normal(rng, (d, d)))
    _param(params, f"{prefix}.wo", _trunc_normal(rng, (d, d)) * out_scale)
    _param(params, f"{prefix}.bo", np.zeros(d))
    _param(params, f"{prefix}.ln_g", np.ones(d))
    _param(params, f"{prefix}.ln_b", np.zeros(d))
    return params


def _ffn_params(d: int, hidden: int, rng: np.random.Generator, prefix: str, params: dict,
                d_out: int | None = None, with_ln: bool = True, out_scale: float = 1.0) -> None:
    d_out = d if d_out is None else d_out
    if with_ln:
        _param(params, f"{prefix}.ln_g", np.ones(d))
        _param(params, f"{prefix}.ln_b", np.zeros(d))
    _param(params, f"{prefix}.w1", _trunc_normal(rng, (d, hidden)))
    _param(params, f"{prefix}.b1", np.zeros(hidden))
    _param(params, f"{prefix}.w2", _trunc_normal(rng, (hidden, d_out)) * out_scale)
    _param(params, f"{prefix}.b2", np.zeros(d_out))


def _axial_params(cfg: ModelConfig, rng: np.random.Generator, prefix: str, params: dict,
                  axes: tuple[str, str], out_scale: float = 1.0) -> None:
    attention_params(cfg.d, rng, f"{prefix}.{axes[0]}", params, out_scale=out_scale)
    attention_params(cfg.d, rng, f"{prefix}.{axes[1]}", params, out_scale=out_scale)
    _ffn_params(cfg.d, cfg.d * cfg.ffn_mult, rng, f"{prefix}.ffn", params, out_scale=out_scale)


def init_params(cfg: ModelConfig, seed: int) -> dict[str, Tensor]:
    """All learnable weights, keyed by dotted path names.

    Weight matrices are truncated normal with fan-in scaling, biases
    zero, with three exceptions. (1) The encoder biases are generic
    (std 0.2): a 1- or 2-channel linear embedding with a zero bias is
    rank-deficient per position, and the pre-attention layernorms then
    collapse every position onto one direction (up to sign), erasing
    input magnitudes and leaving variances near the layernorm epsilon.
    (2) Sub-layer output projections carry an extra
    1/sqrt(2 * total residual sub-layers) factor so the accumulated
    random residual contributions do not drown the signal riding the
    identity path. (3) The head readout vectors start at zero, so a
    fresh model emits exactly uniform three-state probabilities.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    out_scale = 1.0 / math.sqrt(2.0 * 9 * cfg.B)  # 9 residual sub-layers per block
    _param(params, "encode.data.w", _trunc_normal(rng, (2, cfg.d)))
    _param(params, "encode.data.b", _trunc_normal(rng, cfg.d, std=0.2))
    _param(params, "encode.graph.w", _trunc_normal(rng, (1, cfg.d)))
    _param(params, "encode.graph.b", _trunc_normal(rng, cfg.d, std=0.2))
    for b in range(cfg.B):
        _axial_params(cfg, rng, f"block{b}.data", params, ("sample", "node"), out_scale=out_scale)
        _axial_params(cfg, rng, f"block{b}.d2g.inner", params, ("sample", "node"), out_scale=out_scale)
        _ffn_params(cfg.d, cfg.d * cfg.ffn_mult, rng, f"block{b}.d2g.pool_u", params, with_ln=False)
        _ffn_params(cfg.d, cfg.d * cfg.ffn_mult, rng, f"block{b}.d2g.pool_v", params, with_ln=False)
        _param(params, f"block{b}.graph.proj_w", _trunc_normal(rng, (cfg.d + 1, cfg.d)))
        _param(params, f"block{b}.graph.proj_b", np.zeros(cfg.d))
        _axial_params(cfg, rng, f"block{b}.graph", params, ("row", "col"), out_scale=out_scale)
    _param(params, "head.ln_g", np.ones(cfg.d))
    _param(params, "head.ln_b", np.zeros(cfg.d))
    _param(params, "head.w1", _trunc_normal(rng, (2 * cfg.d, 2 * cfg.d)))
    _param(params, "head.b1", np.zeros(2 * cfg.d))
    # zero readouts: logits start exactly at zero (uniform three-state)
    _param(params, "head.w_none", np.zeros((2 * cfg.d, 1)))
    _param(params, "head.b_none", np.zeros(1))
    _param(params, "head.w_dir", np.zeros((2 * cfg.d, 1)))
    _param(params, "head.b_dir", np.zeros(1))
    return params


def param_count(params: dict[str, Tensor]) -> int:
    return sum(p.size for p in params.values())


# -- attention kernels --------------------------------------------------------


def tied_attention(x: Tensor, params: dict, prefix: str, cfg: ModelConfig, tag: str = "attn") -> Tensor:
    """Row-tied multi-head attention over the second axis of (R, C, d).

    Attention logits are accumulated over the tied axis R and the head
    dimension, so a single (H, C, C) map is shared by all R rows.
    """
    R, C, d = x.shape
    H, dh = cfg.H, cfg.d_head
    q = T.matmul(x, params[f"{prefix}.wq"])
    k = T.matmul(x, params[f"{prefix}.wk"])
    v = T.matmul(x, params[f"{prefix}.wv"])
    perf.record_proj_flops(tag, 6 * R * C * d * d)

    qh = T.reshape(T.transpose(T.reshape(q, (R, C, H, dh)), (2, 1, 0, 3)), (H, C, R * dh))
    kh = T.reshape(T.transpose(T.reshape(k, (R, C, H, dh)), (2, 1, 0, 3)), (H, C, R * dh))
    scale = 1.0 / math.sqrt((R * dh) if cfg.scale_by_tied_axis else dh)
    logits = T.mul(T.matmul(qh, T.transpose(kh, (0, 2, 1))), scale)  # (H, C, C)
    perf.record_attention_map(H * C * C)
    perf.record_map_flops(tag, 2 * R * C * C * d)

    probs = T.softmax(logits, axis=-1)
    vh = T.reshape(T.transpose(T.reshape(v, (R, C, H, dh)), (2, 1, 0, 3)), (H, C, R * dh))
    ctx = T.matmul(probs, vh)  # (H, C, R*dh): the map is shared by all R rows
    perf.record_map_flops(tag, 2 * R * C * C * d)

    out = T.reshape(T.transpose(T.reshape(ctx, (H, C, R, dh)), (2, 1, 0, 3)), (R, C, d))
    perf.record_proj_flops(tag, 2 * R * C * d * d)
    return T.add(T.matmul(out, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])


def vanilla_attention(x: Tensor, params: dict, prefix: str, cfg: ModelConfig, tag: str = "attn") -> Tensor:
    """Reference kernel with one attention map per row: (R, H, C, C) storage.

    Exists only for the memory/efficiency comparisons; the trained model
    always uses the tied kernel.
    """
    R, C, d = x.shape
    H, dh = cfg.H, cfg.d_head
    q = T.matmul(x, params[f"{prefix}.wq"])
    k = T.matmul(x, params[f"{prefix}.wk"])
    v = T.matmul(x, params[f"{prefix}.wv"])
    perf.record_proj_flops(tag, 6 * R * C * d * d)

    q4 = T.transpose(T.reshape(q, (R, C, H, dh)), (0, 2, 1, 3))  # (R, H, C, dh)
    k4 = T.transpose(T.reshape(k, (R, C, H, dh)), (0, 2, 1, 3))
    v4 = T.transpose(T.reshape(v, (R, C, H, dh)), (0, 2, 1, 3))
    logits = T.mul(T.matmul(q4, T.transpose(k4, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    perf.record_attention_map(R * H * C * C)
    perf.record_map_flops(tag, 2 * R * C * C * d)

    probs = T.softmax(logits, axis=-1)
    ctx = T.matmul(probs, v4)  # (R, H, C, dh)
    perf.record_map_flops(tag, 2 * R * C * C * d)

    out = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (R, C, d))
    perf.record_proj_flops(tag, 2 * R * C * d * d)
    return T.add(T.matmul(out, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])


def _attn_sublayer(x: Tensor, params: dict, prefix: str, cfg: ModelConfig, tag: str,
                   rng: np.random.Generator | None = None) -> Tensor:
    h = T.layernorm(x, params[f"{prefix}.ln_g"], params[f"{prefix}.ln_b"])
    kernel = vanilla_attention if cfg.vanilla_attention else tied_attention
    a = kernel(h, params, prefix, cfg, tag)
    if cfg.dropout > 0.0 and rng is not None:
        a = T.dropout(a, cfg.dropout, rng)
    return T.add(x, a)


def tied_axial_attention(x: Tensor, params: dict, prefix: str, cfg: ModelConfig, axis: int,
                         tag: str = "attn", rng: np.random.Generator | None = None) -> Tensor:
    """Pre-layernorm tied attention along grid axis 0 or 1 of (A, B, d),
    with a residual connection. The axis-0 variant is the axis-1 kernel
    conjugated by a transpose of the first two axes."""
    if axis not in (0, 1):
        raise ValueError(f"axis must be 0 or 1, got {axis}")
    if axis == 1:
        return _attn_sublayer(x, params, prefix, cfg, tag, rng=rng)
    xt = T.transpose(x, (1, 0, 2))
    xt = _attn_sublayer(xt, params, prefix, cfg, tag, rng=rng)
    return T.transpose(xt, (1, 0, 2))


def _ffn_sublayer(x: Tensor, params: dict, prefix: str, cfg: ModelConfig, tag: str,
                  rng: np.random.Generator | None = None) -> Tensor:
    h = T.layernorm(x, params[f"{prefix}.ln_g"], params[f"{prefix}.ln_b"])
    h = T.relu(T.add(T.matmul(h, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    h = T.add(T.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])
    hidden = params[f"{prefix}.w1"].shape[1]
    perf.record_proj_flops(tag, 4 * x.size * hidden)
    if cfg.dropout > 0.0 and rng is not None:
        h = T.dropout(h, cfg.dropout, rng)
    return T.add(x, h)


# -- model layers -------------------------------------------------------------


def encode_inputs(dataset: Dataset, prior: GraphPrior, cfg: ModelConfig,
                  params: dict) -> Activations:
    """Linear maps from the 2-channel data grid and the prior matrix."""
    if not dataset.standardized:
        raise ValueError("model consumes standardized datasets")
    n = dataset.n
    if prior.rho.shape != (n, n):
        raise ShapeError(f"prior shape {prior.rho.shape} does not match dataset n={n}")
    grid = np.stack([dataset.D, dataset.I.astype(np.float64)], axis=-1)  # (m, n, 2)
    h_D = T.add(T.matmul(Tensor(grid), params["encode.data.w"]), params["encode.data.b"])
    # bound the effect of near-singular priors before embedding
    rho = np.clip(prior.rho, -10.0, 10.0)[..., None]  # (n, n, 1)
    h_G = T.add(T.matmul(Tensor(rho), params["encode.graph.w"]), params["encode.graph.b"])
    return Activations(h_D=h_D, h_G=h_G)


def data_layer(h_D: Tensor, params: dict, prefix: str, cfg: ModelConfig,
               rng: np.random.Generator | None = None) -> Tensor:
    """Sample-axis attention, node-axis attention, then a position-wise FFN."""
    x = tied_axial_attention(h_D, params, f"{prefix}.sample", cfg, axis=0, tag="sample", rng=rng)
    x = tied_axial_attention(x, params, f"{prefix}.node", cfg, axis=1, tag="node", rng=rng)
    return _ffn_sublayer(x, params, f"{prefix}.ffn", cfg, tag="node", rng=rng)


def data2graph(h_D: Tensor, params: dict, prefix: str, cfg: ModelConfig,
               rng: np.random.Generator | None = None) -> Tensor:
    """Compress the data stream into an (n, n) relation message u v^T."""
    h = data_layer(h_D, params, f"{prefix}.inner", cfg, rng=rng)
    u = _pool_ffn(h, params, f"{prefix}.pool_u")
    v = _pool_ffn(h, params, f"{prefix}.pool_v")
    return T.matmul(u, T.transpose(v, (1, 0)))


def _pool_ffn(h: Tensor, params: dict, prefix: str) -> Tensor:
    pooled = T.mean_pool(h, 0)  # (n, d): average over observations
    z = T.relu(T.add(T.matmul(pooled, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return T.add(T.matmul(z, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def graph_layer(h_G: Tensor, omega: Tensor, params: dict, prefix: str, cfg: ModelConfig,
                rng: np.random.Generator | None = None) -> Tensor:
    """Concatenate the message as an extra channel, project back to d, then
    run axial attention over both node axes."""
    n = h_G.shape[0]
    x = T.concat([h_G, T.reshape(omega, (n, n, 1))], axis=2)
    x = T.add(T.matmul(x, params[f"{prefix}.proj_w"]), params[f"{prefix}.proj_b"])
    perf.record_proj_flops("graph", 2 * n * n * (cfg.d + 1) * cfg.d)
    x = tied_axial_attention(x, params, f"{prefix}.row", cfg, axis=0, tag="graph", rng=rng)
    x = tied_axial_attention(x, params, f"{prefix}.col", cfg, axis=1, tag="graph", rng=rng)
    return _ffn_sublayer(x, params, f"{prefix}.ffn", cfg, tag="graph", rng=rng)


def reduction_unit(h_D: Tensor, r: int) -> Tensor:
    """Chunk-average the sample axis by r, discarding the leftover tail."""
    if r == 1:
        return h_D
    m = h_D.shape[0]
    if m < r:
        logger.warning("reduction skipped: stream length %d < factor %d", m, r)
        return h_D
    kept = r * (m // r)
    if kept != m:
        h_D = T.narrow(h_D, 0, 0, kept)
    return T.mean_pool(h_D, 0, chunk=r)


def predict_head(h_G: Tensor, params: dict, cfg: ModelConfig) -> PredictedGraph:
    """Three-state logits per unordered pair from the final graph embedding.

    One 2-layer FFN (2d -> 2d -> readout) is evaluated on both orderings of
    each pair; a shared direction readout scores i->j from the forward pass
    and j->i from the swapped pass, and the no-edge state reads the
    symmetrized hidden features. Swapping i and j therefore exchanges the
    two direction states exactly, making the head permutation equivariant.
    """
    n = h_G.shape[0]
    h = T.layernorm(h_G, params["head.ln_g"], params["head.ln_b"])
    sym = T.concat([h, T.transpose(h, (1, 0, 2))], axis=2)  # (n, n, 2d): [h_ij, h_ji]
    flat = T.reshape(sym, (n * n, 2 * cfg.d))
    iu, ju = np.triu_indices(n, 1)

    def hidden(rows):
        return T.relu(T.add(T.matmul(rows, params["head.w1"]), params["head.b1"]))

    z_fwd = hidden(T.take_rows(flat, iu * n + ju))  # features of [h_ij, h_ji]
    z_bwd = hidden(T.take_rows(flat, ju * n + iu))  # features of [h_ji, h_ij]
    l_none = T.add(T.matmul(T.mul(T.add(z_fwd, z_bwd), 0.5), params["head.w_none"]),
                   params["head.b_none"])
    l_fwd = T.add(T.matmul(z_fwd, params["head.w_dir"]), params["head.b_dir"])
    l_bwd = T.add(T.matmul(z_bwd, params["head.w_dir"]), params["head.b_dir"])
    logits = T.concat([l_none, l_fwd, l_bwd], axis=1)  # (P, 3)

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    g_hat = np.zeros((n, n))
    g_hat[iu, ju] = probs[:, 1]
    g_hat[ju, iu] = probs[:, 2]
    return PredictedGraph(n=n, pairs=np.stack([iu, ju], axis=1), logits=logits,
                          probabilities=probs, g_hat=g_hat)


def forward(dataset: Dataset, prior: GraphPrior, cfg: ModelConfig, params: dict,
            rng: np.random.Generator | None = None) -> PredictedGraph:
    """Full inference pass; reductions fire after every k-th block."""
    acts = encode_inputs(dataset, prior, cfg, params)
    h_D, h_G = acts.h_D, acts.h_G
    for b in range(cfg.B):
        perf.set_block(b)
        h_D = data_layer(h_D, params, f"block{b}.data", cfg, rng=rng)
        omega = data2graph(h_D, params, f"block{b}.d2g", cfg, rng=rng)
        h_G = graph_layer(h_G, omega, params, f"block{b}.graph", cfg, rng=rng)
        if (b + 1) % cfg.k == 0 and (b + 1) < cfg.B:
            reduced = reduction_unit(h_D, cfg.r)
            if reduced.shape[0] != h_D.shape[0]:
                perf.record_reduction(reduced.shape[0])
            h_D = reduced
    perf.set_block(-1)
    return predict_head(h_G, params, cfg)


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, cfg: ModelConfig, params: dict[str, Tensor]) -> None:
    """Checkpoint directory: config.txt header + serialized weights (f32)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    header = [
        f"B = {cfg.B}", f"k = {cfg.k}", f"r = {cfg.r}", f"d = {cfg.d}", f"H = {cfg.H}",
        f"ffn_mult = {cfg.ffn_mult}", f"version = {__version__}",
    ]
    (path / "config.txt").write_text("".join(line + "\n" for line in header))
    arrays = {name: p.data for name, p in params.items()}
    save_tensors(path / "weights.bin", path / "weights.manifest", arrays, dtype="f32")


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, Tensor]]:
    path = Path(path)
    fields = {}
    for line in (path / "config.txt").read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
    cfg = ModelConfig(B=int(fields["B"]), k=int(fields["k"]), r=int(fields["r"]),
                      d=int(fields["d"]), H=int(fields["H"]), ffn_mult=int(fields["ffn_mult"]))
    arrays = load_tensors(path / "weights.bin", path / "weights.manifest")
    params = {name: Tensor(arr, requires_grad=True) for name, arr in arrays.items()}
    return cfg, params
