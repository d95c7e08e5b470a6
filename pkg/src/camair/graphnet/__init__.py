"""From-scratch differentiable graph models for NO2 prediction."""

from .autodiff import Tensor
from .models import (
    GraphSample,
    ModelDims,
    TrainConfig,
    count_params,
    fully_connected_adjacency,
    gat_forward,
    gcn_forward,
    init_params,
    kl_divergence,
    metrics,
    model_forward,
    msle,
    msle_loss,
    multibranch_forward,
    normalize_adjacency,
    signature_branch_param_count,
)
from .training import (
    Adam,
    TrainResult,
    evaluate,
    load_checkpoint,
    predict_surface,
    save_checkpoint,
    split_by_hour,
    train,
    write_history,
)

__all__ = [
    "Adam",
    "GraphSample",
    "ModelDims",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "count_params",
    "evaluate",
    "fully_connected_adjacency",
    "gat_forward",
    "gcn_forward",
    "init_params",
    "kl_divergence",
    "load_checkpoint",
    "metrics",
    "model_forward",
    "msle",
    "msle_loss",
    "multibranch_forward",
    "normalize_adjacency",
    "predict_surface",
    "save_checkpoint",
    "signature_branch_param_count",
    "split_by_hour",
    "train",
    "write_history",
]
