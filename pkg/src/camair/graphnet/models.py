"""Graph model architectures, losses, and validation metrics.

Three architectures share one contract: they map a camera-graph sample to
NO2 predictions at M sensor positions (or one position). The camera graph
enters through a symmetrically normalized adjacency with self-loops; the
sensor graph is fully connected because air diffuses without the street
network's constraints, and enters either as a feature block (multibranch)
or as one smoothing layer over the outputs (gcn/gat, behind a config
switch). The bridge from N camera nodes to M outputs is a dense head on
mean-pooled node embeddings.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from ..datamodel import HourKey
from ..rng import stream as _stream
from ..errors import (
    DegenerateDistributionError,
    IsolatedNodeError,
    MissingSignatureBlockError,
    NegativeInputError,
    ShapeMismatchError,
    ValidationError,
)
from . import autodiff as ad
from .autodiff import Tensor

ARCHITECTURES = ("gcn", "gat", "multibranch")
HEADS = ("softplus", "sigmoid")

MULTIBRANCH_FILTERS = 32
MULTIBRANCH_DENSE = 50


@dataclass
class TrainConfig:
    arch: str = "multibranch"
    hidden: int = 50
    graph_layers: int = 3
    heads: int = 2
    dropout: float = 0.4
    lr: float = 0.01
    batch_size: int = 8
    max_epochs: int = 100
    patience: int = 20
    seed: int = 42
    use_signature: bool = False
    knn_k: int = 10
    head: str = "softplus"
    y_max: float | None = None
    env_refine: bool = False
    self_loops: bool = True

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValidationError(f"arch must be one of {ARCHITECTURES}")
        if self.head not in HEADS:
            raise ValidationError(f"head must be one of {HEADS}")
        if self.lr <= 0:
            raise ValidationError("lr must be > 0")
        if not 0 <= self.dropout < 1:
            raise ValidationError("dropout must lie in [0, 1)")
        if self.patience > self.max_epochs:
            raise ValidationError("patience must not exceed max_epochs")
        if self.graph_layers < 1 or self.heads < 1 or self.hidden < 1:
            raise ValidationError("layer sizes must be positive")

    def canonical(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]


@dataclass(frozen=True, eq=False)
class GraphSample:
    """One hour's camera graph with its sensor-space target."""

    hour: HourKey
    flows: np.ndarray          # (N, 13) hourly channel totals
    categorical: np.ndarray    # (N, Ccat) dummied static features
    numerical: np.ndarray      # (N, Cnum) numeric static + weather
    camera_adj: np.ndarray     # (N, N) normalized, symmetric
    env_adj: np.ndarray        # (M, M) normalized, fully connected
    target: np.ndarray         # (M,)
    signature_block: np.ndarray | None = None  # (N, S)

    def __post_init__(self):
        n = self.flows.shape[0]
        m = self.target.shape[0]
        for name in ("flows", "categorical", "numerical", "camera_adj",
                     "env_adj", "target"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"sample {self.hour.isoformat()}: "
                                      f"non-finite values in {name}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.categorical.shape[0] != n or self.numerical.shape[0] != n:
            raise ShapeMismatchError("feature blocks disagree on node count")
        if self.camera_adj.shape != (n, n):
            raise ShapeMismatchError(f"camera adjacency must be ({n}, {n})")
        if not np.allclose(self.camera_adj, self.camera_adj.T, atol=1e-9):
            raise ValidationError("camera adjacency must be symmetric")
        if self.env_adj.shape != (m, m):
            raise ShapeMismatchError(f"env adjacency must be ({m}, {m})")
        if self.signature_block is not None:
            sig = np.asarray(self.signature_block, dtype=float)
            if sig.shape[0] != n or not np.all(np.isfinite(sig)):
                raise ValidationError("bad signature block")
            sig.setflags(write=False)
            object.__setattr__(self, "signature_block", sig)

    @property
    def n_nodes(self) -> int:
        return self.flows.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.target.shape[0]

    def node_features(self, use_signature: bool) -> np.ndarray:
        blocks = [self.flows, self.categorical, self.numerical]
        if use_signature:
            if self.signature_block is None:
                raise MissingSignatureBlockError(
                    f"sample {self.hour.isoformat()} has no signature block")
            blocks.append(self.signature_block)
        return np.hstack(blocks)


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Symmetric normalization with self-loops: D^-1/2 (A + I) D^-1/2."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatchError(f"adjacency must be square, got {a.shape}")
    a_hat = a + np.eye(a.shape[0])
    d = a_hat.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return a_hat * inv_sqrt[:, None] * inv_sqrt[None, :]


def fully_connected_adjacency(m: int) -> np.ndarray:
    return normalize_adjacency(np.ones((m, m)) - np.eye(m))


# ---------------------------------------------------------------------------
# Parameter initialization
# ---------------------------------------------------------------------------

def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _param_rng(seed: int) -> np.random.Generator:
    return _stream(seed, "init")


@dataclass(frozen=True)
class ModelDims:
    n_nodes: int
    n_outputs: int
    flows: int
    categorical: int
    numerical: int
    signature: int = 0

    @classmethod
    def of(cls, sample: GraphSample, use_signature: bool) -> "ModelDims":
        sig = 0
        if use_signature:
            if sample.signature_block is None:
                raise MissingSignatureBlockError("dataset lacks signature blocks")
            sig = sample.signature_block.shape[1]
        return cls(sample.n_nodes, sample.n_outputs, sample.flows.shape[1],
                   sample.categorical.shape[1], sample.numerical.shape[1], sig)

    @property
    def node_feature_dim(self) -> int:
        return self.flows + self.categorical + self.numerical + self.signature


def init_params(cfg: TrainConfig, dims: ModelDims) -> dict[str, Tensor]:
    """Glorot-initialized weights, zero biases; deterministic for a seed."""
    rng = _param_rng(cfg.seed)
    params: dict[str, np.ndarray] = {}
    if cfg.arch == "gcn":
        in_dim = dims.node_feature_dim
        for layer in range(cfg.graph_layers):
            params[f"gcn{layer}.w"] = _glorot(rng, in_dim, cfg.hidden)
            in_dim = cfg.hidden
        _head_params(params, rng, cfg, dims, in_dim)
    elif cfg.arch == "gat":
        in_dim = dims.node_feature_dim
        for layer in range(cfg.graph_layers):
            last = layer == cfg.graph_layers - 1
            for head in range(cfg.heads):
                prefix = f"gat{layer}.h{head}"
                params[f"{prefix}.w"] = _glorot(rng, in_dim, cfg.hidden)
                params[f"{prefix}.a_src"] = _glorot(rng, cfg.hidden, 1)
                params[f"{prefix}.a_dst"] = _glorot(rng, cfg.hidden, 1)
            in_dim = cfg.hidden if last else cfg.hidden * cfg.heads
        _head_params(params, rng, cfg, dims, in_dim)
    else:  # multibranch
        for name, (positions, channels) in _branch_shapes(cfg, dims).items():
            in_dim = channels
            for layer in range(3):
                params[f"{name}.conv{layer}.w"] = _glorot(rng, in_dim, MULTIBRANCH_FILTERS)
                params[f"{name}.conv{layer}.b"] = np.zeros((1, MULTIBRANCH_FILTERS))
                in_dim = MULTIBRANCH_FILTERS
            params[f"{name}.dense.w"] = _glorot(
                rng, positions * MULTIBRANCH_FILTERS, MULTIBRANCH_DENSE)
            params[f"{name}.dense.b"] = np.zeros((1, MULTIBRANCH_DENSE))
        concat_dim = MULTIBRANCH_DENSE * len(_branch_shapes(cfg, dims))
        params["out.w"] = _glorot(rng, concat_dim, dims.n_outputs)
        params["out.b"] = np.zeros((1, dims.n_outputs))
        if cfg.env_refine:
            params["refine.w"] = np.ones((1, 1))
            params["refine.b"] = np.zeros((1, 1))
    return {name: Tensor(value) for name, value in params.items()}


def _head_params(params, rng, cfg, dims, in_dim):
    params["out.w"] = _glorot(rng, in_dim, dims.n_outputs)
    params["out.b"] = np.zeros((1, dims.n_outputs))
    if cfg.env_refine:
        params["refine.w"] = np.ones((1, 1))
        params["refine.b"] = np.zeros((1, 1))


def _branch_shapes(cfg: TrainConfig, dims: ModelDims) -> dict[str, tuple[int, int]]:
    """(positions, channels) per multibranch input block, in wire order."""
    shapes = {
        "nodes": (dims.n_nodes, dims.flows),
        "edges": (dims.n_nodes, dims.n_nodes),
        "categorical": (dims.n_nodes, max(dims.categorical, 1)),
        "numerical": (dims.n_nodes, max(dims.numerical, 1)),
        "env": (dims.n_outputs, dims.n_outputs),
    }
    if cfg.use_signature:
        shapes["signature"] = (dims.n_nodes, dims.signature)
    return shapes


def count_params(params: Mapping[str, Tensor]) -> int:
    return sum(int(np.prod(t.value.shape)) for t in params.values())


def signature_branch_param_count(cfg: TrainConfig, dims: ModelDims) -> int:
    """Parameters attributable to the signature branch, including its slice
    of the concatenation dense layer."""
    conv = dims.signature * MULTIBRANCH_FILTERS + MULTIBRANCH_FILTERS
    conv += 2 * (MULTIBRANCH_FILTERS * MULTIBRANCH_FILTERS + MULTIBRANCH_FILTERS)
    dense = dims.n_nodes * MULTIBRANCH_FILTERS * MULTIBRANCH_DENSE + MULTIBRANCH_DENSE
    concat_slice = MULTIBRANCH_DENSE * dims.n_outputs
    return conv + dense + concat_slice


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def gcn_forward(x, adj: np.ndarray, weights: list[Tensor],
                dropout_rate: float = 0.0,
                rng: np.random.Generator | None = None) -> Tensor:
    """Stack of graph convolutions Z = A_hat X W with ReLU between layers;
    the last layer is linear."""
    h = x if isinstance(x, Tensor) else Tensor(x)
    adj_t = Tensor(adj)
    if adj.shape[0] != h.value.shape[0]:
        raise ShapeMismatchError("adjacency and features disagree on node count")
    for layer, w in enumerate(weights):
        h = ad.dropout(h, dropout_rate, rng)
        z = adj_t @ h @ w
        h = ad.relu(z) if layer < len(weights) - 1 else z
    return h


def gat_forward(h, adjacency: np.ndarray, layer_params: list[list[dict[str, Tensor]]],
                self_loops: bool = True, dropout_rate: float = 0.0,
                rng: np.random.Generator | None = None,
                leaky_alpha: float = 0.2) -> Tensor:
    """Multi-head graph attention; heads concatenate on hidden layers and
    average on the last, with ELU between layers."""
    h = h if isinstance(h, Tensor) else Tensor(h)
    n = h.value.shape[0]
    mask = (np.asarray(adjacency) != 0).astype(float)
    if self_loops:
        mask = np.maximum(mask, np.eye(n))
    elif np.any(mask.sum(axis=1) == 0):
        node = int(np.argmin(mask.sum(axis=1)))
        raise IsolatedNodeError(f"node {node} has no neighbours")
    neg_mask = Tensor(np.where(mask > 0, 0.0, -np.inf))

    for layer_idx, heads in enumerate(layer_params):
        h = ad.dropout(h, dropout_rate, rng)
        outputs = []
        for head in heads:
            wh = h @ head["w"]
            src = wh @ head["a_src"]            # (n, 1)
            dst = (wh @ head["a_dst"]).reshape(1, n)
            e = ad.leaky_relu(src + dst, leaky_alpha) + neg_mask
            shift = np.max(np.where(mask > 0, e.value, -np.inf), axis=1, keepdims=True)
            scores = ad.exp(e - Tensor(shift)) * Tensor(mask)
            alpha = scores / scores.sum(axis=1, keepdims=True)
            outputs.append(alpha @ wh)
        if layer_idx < len(layer_params) - 1:
            h = ad.elu(ad.concat(outputs, axis=1))
        else:
            total = outputs[0]
            for out in outputs[1:]:
                total = total + out
            h = total * (1.0 / len(outputs))
    return h


def _branch_forward(x: np.ndarray, params: Mapping[str, Tensor], prefix: str,
                    dropout_rate: float, rng) -> Tensor:
    h: Tensor = Tensor(x)
    for layer in range(3):
        h = ad.relu(h @ params[f"{prefix}.conv{layer}.w"] + params[f"{prefix}.conv{layer}.b"])
    h = ad.dropout(h, dropout_rate, rng)
    flat = h.reshape(1, -1)
    return ad.relu(flat @ params[f"{prefix}.dense.w"] + params[f"{prefix}.dense.b"])


def multibranch_forward(blocks: Mapping[str, np.ndarray],
                        params: Mapping[str, Tensor],
                        dropout_rate: float = 0.4,
                        rng: np.random.Generator | None = None) -> Tensor:
    """Per-block encoder of width-1 1-D convolutions (per-position dense),
    flattened and concatenated into the output head (pre-activation)."""
    encoded = []
    for name in ("nodes", "edges", "categorical", "numerical", "env", "signature"):
        if f"{name}.conv0.w" not in params:
            continue
        if name not in blocks:
            raise (MissingSignatureBlockError if name == "signature"
                   else ShapeMismatchError)(f"missing input block {name!r}")
        expected = params[f"{name}.conv0.w"].value.shape[0]
        if blocks[name].shape[1] != expected:
            raise ShapeMismatchError(
                f"block {name!r} has {blocks[name].shape[1]} channels, "
                f"expected {expected}")
        encoded.append(_branch_forward(blocks[name], params, name, dropout_rate, rng))
    merged = ad.concat(encoded, axis=1)
    return merged @ params["out.w"] + params["out.b"]


def _sample_blocks(sample: GraphSample, cfg: TrainConfig) -> dict[str, np.ndarray]:
    blocks = {
        "nodes": sample.flows,
        "edges": sample.camera_adj,
        "categorical": sample.categorical if sample.categorical.shape[1]
        else np.zeros((sample.n_nodes, 1)),
        "numerical": sample.numerical if sample.numerical.shape[1]
        else np.zeros((sample.n_nodes, 1)),
        "env": sample.env_adj,
    }
    if cfg.use_signature:
        if sample.signature_block is None:
            raise MissingSignatureBlockError(
                f"sample {sample.hour.isoformat()} has no signature block")
        blocks["signature"] = sample.signature_block
    return blocks


def model_forward(params: Mapping[str, Tensor], cfg: TrainConfig,
                  sample: GraphSample,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Full forward pass to predictions of shape (1, M). ``rng=None`` is
    evaluation mode (dropout off)."""
    if cfg.arch == "multibranch":
        pre = multibranch_forward(_sample_blocks(sample, cfg), params,
                                  cfg.dropout, rng)
    else:
        x = sample.node_features(cfg.use_signature)
        if cfg.arch == "gcn":
            weights = [params[f"gcn{l}.w"] for l in range(cfg.graph_layers)]
            emb = gcn_forward(x, sample.camera_adj, weights, cfg.dropout, rng)
        else:
            layer_params = [
                [{"w": params[f"gat{l}.h{h}.w"],
                  "a_src": params[f"gat{l}.h{h}.a_src"],
                  "a_dst": params[f"gat{l}.h{h}.a_dst"]}
                 for h in range(cfg.heads)]
                for l in range(cfg.graph_layers)
            ]
            emb = gat_forward(x, sample.camera_adj, layer_params,
                              self_loops=cfg.self_loops,
                              dropout_rate=cfg.dropout, rng=rng)
        pooled = emb.mean(axis=0, keepdims=True)
        pre = pooled @ params["out.w"] + params["out.b"]

    if cfg.env_refine and "refine.w" in params and pre.value.shape[1] > 1:
        smoothed = pre @ Tensor(sample.env_adj)
        pre = pre + smoothed * params["refine.w"] + params["refine.b"]

    if cfg.head == "softplus":
        return ad.softplus(pre)
    y_max = cfg.y_max if cfg.y_max is not None else 1.0
    return ad.sigmoid(pre) * y_max


# ---------------------------------------------------------------------------
# Loss and metrics
# ---------------------------------------------------------------------------

def msle(x_true, y_pred) -> float:
    """Mean squared difference of log(1 + value) transforms."""
    x = np.asarray(x_true, dtype=float)
    y = np.asarray(y_pred, dtype=float)
    if np.any(x < 0) or np.any(y < 0):
        raise NegativeInputError("MSLE inputs must be non-negative")
    return float(np.mean((np.log1p(x) - np.log1p(y)) ** 2))


def msle_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Differentiable MSLE of a prediction tensor against a constant target."""
    target = np.asarray(target, dtype=float)
    if np.any(target < 0) or np.any(pred.value < 0):
        raise NegativeInputError("MSLE inputs must be non-negative")
    diff = ad.log1p(pred) - np.log1p(target).reshape(pred.value.shape)
    return (diff * diff).mean()


def kl_divergence(p_raw, q_raw, eps: float = 1e-12) -> float:
    """Relative entropy of the sum-normalized vectors, eps-smoothed."""
    p = np.asarray(p_raw, dtype=float)
    q = np.asarray(q_raw, dtype=float)
    if np.any(p < 0) or np.any(q < 0):
        raise NegativeInputError("KL inputs must be non-negative")
    if p.sum() == 0.0 or q.sum() == 0.0:
        raise DegenerateDistributionError("all-zero vector in KL divergence")
    p = np.maximum(p / p.sum(), eps)
    q = np.maximum(q / q.sum(), eps)
    p, q = p / p.sum(), q / q.sum()
    return float(np.sum(p * np.log(p / q)))


def metrics(x_true, y_pred) -> dict[str, float]:
    """MAE, MSE, KL divergence, and r-squared of predictions."""
    x = np.asarray(x_true, dtype=float).ravel()
    y = np.asarray(y_pred, dtype=float).ravel()
    if x.shape != y.shape:
        raise ShapeMismatchError("metric vectors must have equal length")
    mae = float(np.mean(np.abs(y - x)))
    mse = float(np.mean((y - x) ** 2))
    ss_tot = float(((x - x.mean()) ** 2).sum())
    r2 = 1.0 - float(((x - y) ** 2).sum()) / ss_tot if ss_tot > 0 else float("nan")
    return {"mae": mae, "mse": mse, "kl": kl_divergence(x, y), "r2": r2}
