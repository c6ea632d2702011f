"""Amortized causal discovery with tied axial attention.

A numpy-based library covering the full loop: synthetic SCM data
generation, a two-stream attention model with chunked sample reduction,
supervised training, zero-shot graph inference, structure metrics, and an
executable compute/memory cost model.
"""

from .model import (
    Activations,
    ModelConfig,
    PredictedGraph,
    __version__,
    encode_inputs,
    forward,
    init_params,
    load_checkpoint,
    param_count,
    predict_head,
    reduction_unit,
    save_checkpoint,
    tied_attention,
    tied_axial_attention,
    vanilla_attention,
)
from .metrics import (
    MetricReport,
    auc,
    average_precision,
    corr_baseline,
    cyclicity,
    evaluate_scores,
    invcov_baseline,
    orientation_accuracy,
    shd,
)
from .perf import CostReport, analytic_cost_ratio, bench, measure_attention_memory, reduction_schedule
from .simulator import (
    CausalGraph,
    Dataset,
    GraphPrior,
    Mechanism,
    compute_prior,
    read_dataset,
    sample_dataset,
    sample_graph,
    sample_mechanism,
    standardize,
    write_dataset,
)
from .tensor import Tensor, no_grad
from .training import Adam, TrainConfig, TrainItem, TrainResult, pair_loss, prepare_items, train

__all__ = [name for name in dir() if not name.startswith("_")]
