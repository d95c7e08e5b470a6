"""Training loop: Adam, chronological splits, early stopping, checkpoints.

Everything is deterministic for a (seed, config, dataset-order) triple:
initialization and dropout draw from counter-based streams keyed on those
inputs, batches run in sample-index order, and gradients accumulate in a
fixed order.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from ..datamodel import write_csv
from ..errors import NonFiniteLossError, ValidationError
from ..rng import stream as _stream
from .autodiff import Tensor
from .models import (
    GraphSample,
    ModelDims,
    TrainConfig,
    init_params,
    model_forward,
    msle,
    msle_loss,
    metrics,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = b"CAMAIRCKPT1\n"


class Adam:
    """Adam on a named parameter dict, stepping in sorted-name order."""

    def __init__(self, params: dict[str, Tensor], lr: float):
        self.params = params
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            self.m[name] = ADAM_BETA1 * self.m[name] + (1 - ADAM_BETA1) * g
            self.v[name] = ADAM_BETA2 * self.v[name] + (1 - ADAM_BETA2) * g * g
            m_hat = self.m[name] / (1 - ADAM_BETA1 ** self.t)
            v_hat = self.v[name] / (1 - ADAM_BETA2 ** self.t)
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def split_by_hour(dataset: list[GraphSample], train_fraction: float = 0.8
                  ) -> tuple[list[GraphSample], list[GraphSample]]:
    """Chronological 80/20 split on unique hours; one hour never straddles
    the boundary."""
    ordered = sorted(dataset, key=lambda s: s.hour)
    hours = sorted({s.hour for s in ordered})
    if len(hours) < 2:
        raise ValidationError("need at least 2 distinct hours to split")
    cut = max(1, min(len(hours) - 1, int(round(train_fraction * len(hours)))))
    train_hours = set(hours[:cut])
    train = [s for s in ordered if s.hour in train_hours]
    val = [s for s in ordered if s.hour not in train_hours]
    return train, val


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    cfg: TrainConfig
    history: list[dict]
    best_epoch: int
    best_val_msle: float


def evaluate(params: dict[str, np.ndarray] | dict[str, Tensor], cfg: TrainConfig,
             samples: list[GraphSample]) -> dict[str, float]:
    """Dropout-off MSLE plus MAE/MSE/KL/r2 over all (sample, sensor) pairs."""
    tensors = {k: (v if isinstance(v, Tensor) else Tensor(v))
               for k, v in params.items()}
    preds, truths = [], []
    for sample in samples:
        out = model_forward(tensors, cfg, sample, rng=None)
        preds.append(out.value.ravel())
        truths.append(sample.target)
    y_pred = np.concatenate(preds)
    y_true = np.concatenate(truths)
    result = metrics(y_true, y_pred)
    result["msle"] = msle(y_true, y_pred)
    return result


def train(dataset: list[GraphSample], cfg: TrainConfig) -> TrainResult:
    """Fit one model; returns the best-validation-epoch parameters."""
    if not dataset:
        raise ValidationError("empty dataset")
    train_set, val_set = split_by_hour(dataset)
    if cfg.y_max is None and cfg.head == "sigmoid":
        cfg.y_max = 1.2 * max(float(s.target.max()) for s in train_set)
    dims = ModelDims.of(train_set[0], cfg.use_signature)
    params = init_params(cfg, dims)
    optimizer = Adam(params, cfg.lr)

    history: list[dict] = []
    best_val = float("inf")
    best_epoch = -1
    best_params: dict[str, np.ndarray] = {}
    since_best = 0

    for epoch in range(cfg.max_epochs):
        for batch_idx in range(0, len(train_set), cfg.batch_size):
            batch = train_set[batch_idx:batch_idx + cfg.batch_size]
            optimizer.zero_grad()
            loss = None
            for si, sample in enumerate(batch):
                rng = _stream(cfg.seed, "dropout", epoch, batch_idx, si)
                pred = model_forward(params, cfg, sample, rng=rng)
                sample_loss = msle_loss(pred, sample.target)
                loss = sample_loss if loss is None else loss + sample_loss
            loss = loss * (1.0 / len(batch))
            if not np.isfinite(loss.value):
                raise NonFiniteLossError(epoch, batch_idx // cfg.batch_size)
            loss.backward()
            optimizer.step()

        train_eval = evaluate(params, cfg, train_set)
        val_eval = evaluate(params, cfg, val_set)
        history.append({
            "epoch": epoch,
            "train_msle": train_eval["msle"],
            "val_msle": val_eval["msle"],
            "mae": val_eval["mae"],
            "kl": val_eval["kl"],
            "r2": val_eval["r2"],
        })
        if val_eval["msle"] < best_val:
            best_val = val_eval["msle"]
            best_epoch = epoch
            best_params = {k: np.array(p.value) for k, p in params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break

    return TrainResult(best_params, cfg, history, best_epoch, best_val)


def predict_surface(params: dict[str, np.ndarray], cfg: TrainConfig,
                    sample: GraphSample) -> np.ndarray:
    """Deterministic prediction (dropout off); outputs are non-negative by
    construction of the output heads."""
    tensors = {k: Tensor(v) for k, v in params.items()}
    return model_forward(tensors, cfg, sample, rng=None).value.ravel()


# ---------------------------------------------------------------------------
# Checkpoints and history
# ---------------------------------------------------------------------------

def save_checkpoint(path, result: TrainResult) -> None:
    """Versioned binary: magic, JSON header, then raw float64 arrays in
    header order. Byte-identical for identical runs."""
    names = sorted(result.params)
    header = {
        "arch": result.cfg.arch,
        "cfg": json.loads(result.cfg.canonical()),
        "cfg_hash": result.cfg.config_hash(),
        "seed": result.cfg.seed,
        "best_epoch": result.best_epoch,
        "best_val_msle": result.best_val_msle,
        "params": [{"name": n, "shape": list(result.params[n].shape)} for n in names],
    }
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for name in names:
        buf.write(np.ascontiguousarray(result.params[name], dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> TrainResult:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValidationError(f"{path}: not a camair checkpoint")
    body = blob[len(CHECKPOINT_MAGIC):]
    newline = body.index(b"\n")
    header = json.loads(body[:newline])
    cfg = TrainConfig(**header["cfg"])
    if cfg.config_hash() != header["cfg_hash"]:
        raise ValidationError(f"{path}: config hash mismatch")
    offset = newline + 1
    params = {}
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        size = int(np.prod(shape)) * 8
        params[spec["name"]] = np.frombuffer(
            body[offset:offset + size], dtype="<f8").reshape(shape).copy()
        offset += size
    return TrainResult(params, cfg, [], header["best_epoch"], header["best_val_msle"])


def write_history(path, history: list[dict], comment: str | None = None) -> None:
    write_csv(path, ["epoch", "train_msle", "val_msle", "mae", "kl", "r2"],
              ([row["epoch"], row["train_msle"], row["val_msle"],
                row["mae"], row["kl"], row["r2"]] for row in history),
              comment=comment)
