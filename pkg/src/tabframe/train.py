"""Losses, optimizer, metrics, the training loop, and row-embedding export.

Everything is deterministic given the seed: the train/validation split is a
pure hash of the row index, shuffles come from per-epoch generators derived
from the seed, and parameter initialization is seeded per parameter name.
Two runs with the same inputs produce bit-identical histories and parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor, Tape, backward
from .container import read_container, write_container
from .errors import (
    EmptySplitError,
    LabelOutOfRangeError,
    NonFiniteLossError,
    SchemaError,
    ShapeMismatchError,
    SingleClassError,
)
from .frame import TensorFrame, frame_row_select
from .hashutil import splitmix64_at, to_unit_interval
from .model import PARAMS_MAGIC, TabularModel
from .stypes import Schema, TaskType

_SHUFFLE_TAG = 0xB7E15162  # namespaces epoch-shuffle streams away from init streams


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch SGD settings (Adam with bias correction)."""

    batch_size: int = 128
    epochs: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.batch_size < 1:
            raise SchemaError("batch_size must be >= 1")
        if self.epochs < 1:
            raise SchemaError("epochs must be >= 1")
        if not (0.0 < self.val_fraction < 1.0):
            raise SchemaError("val_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "seed": self.seed,
            "val_fraction": self.val_fraction,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = set(cls().to_dict())
        unknown = set(obj) - known
        if unknown:
            raise SchemaError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**obj)


# --- losses ------------------------------------------------------------------

def bce_with_logits(logits: DiffTensor, labels: np.ndarray) -> DiffTensor:
    """Mean binary cross-entropy on raw scores, numerically stable:
    ``max(z, 0) - z*y + log(1 + exp(-|z|))`` per row."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    z = logits.data.reshape(-1)
    if y.shape != z.shape:
        raise ShapeMismatchError(f"logits {z.shape} vs labels {y.shape}")
    if y.size and not np.all((y == 0.0) | (y == 1.0)):
        bad = y[(y != 0.0) & (y != 1.0)][0]
        raise LabelOutOfRangeError(f"labels must be 0 or 1, found {bad}")
    with np.errstate(over="ignore", invalid="ignore"):  # non-finite logits surface via NonFiniteLossError
        per_row = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(per_row.mean())
    n = max(y.size, 1)

    def vjp(g):
        # stable sigmoid: never exponentiates a positive argument
        sigmoid = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                           np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
        return (np.asarray(g).reshape(()) * (sigmoid - y) / n).reshape(logits.shape),

    return ad.apply_custom("bce_with_logits", (logits,), out, vjp)


def mse(preds: DiffTensor, targets: np.ndarray) -> DiffTensor:
    """Mean squared error as a differentiable scalar."""
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    p = preds.data.reshape(-1)
    if t.shape != p.shape:
        raise ShapeMismatchError(f"preds {p.shape} vs targets {t.shape}")
    diff = p - t
    out = np.asarray((diff * diff).mean() if t.size else 0.0)
    n = max(t.size, 1)

    def vjp(g):
        return (np.asarray(g).reshape(()) * 2.0 * diff / n).reshape(preds.shape),

    return ad.apply_custom("mse", (preds,), out, vjp)


def mae(preds, targets) -> float:
    """Mean absolute error (metric only, not differentiated)."""
    p = np.asarray(preds.data if isinstance(preds, DiffTensor) else preds, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ShapeMismatchError(f"preds {p.shape} vs targets {t.shape}")
    return float(np.abs(p - t).mean()) if p.size else 0.0


# --- metrics -----------------------------------------------------------------

def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability that a random positive outranks a random negative.

    Rank-sum formulation; tied scores contribute one half.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if s.shape != y.shape:
        raise ShapeMismatchError(f"scores {s.shape} vs labels {y.shape}")
    pos = int((y == 1.0).sum())
    neg = int((y == 0.0).sum())
    if pos + neg != y.size:
        raise LabelOutOfRangeError("labels must be 0 or 1")
    if pos == 0 or neg == 0:
        raise SingleClassError("ROC-AUC needs both classes present")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i: j + 1]] = 0.5 * (i + j) + 1.0  # average of 1-based ranks
        i = j + 1
    rank_sum = float(ranks[y == 1.0].sum())
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)


# --- optimizer -----------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, DiffTensor], state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update; gradients are zeroed afterwards."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeMismatchError(f"grad of {name!r} has shape {g.shape}, param {p.data.shape}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        p.grad = None


# --- the training loop -----------------------------------------------------------

def split_rows(num_rows: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic hash-based split: row ``i`` goes to validation iff the
    ``(i+1)``-th splitmix64 draw from ``seed``, mapped to [0, 1), is below
    ``val_fraction``.  Independent of row order and of numpy's RNG."""
    u = to_unit_interval(splitmix64_at(seed, np.arange(num_rows)))
    val_mask = u < val_fraction
    train_idx = np.flatnonzero(~val_mask)
    val_idx = np.flatnonzero(val_mask)
    if train_idx.size == 0 or val_idx.size == 0:
        raise EmptySplitError(
            f"split left train={train_idx.size}, val={val_idx.size} rows"
        )
    return train_idx, val_idx


@dataclass
class TrainResult:
    history: list[tuple[int, float, float]]
    best_params: dict[str, np.ndarray]
    best_epoch: int
    best_metric: float
    metric_name: str


def _epoch_order(train_idx: np.ndarray, seed: int, epoch: int) -> np.ndarray:
    rng = np.random.default_rng(
        np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, _SHUFFLE_TAG, epoch])
    )
    return train_idx[rng.permutation(train_idx.size)]


def train(
    model: TabularModel,
    frame: TensorFrame,
    schema: Schema,
    config: TrainConfig,
) -> TrainResult:
    """Mini-batch training with per-epoch validation and best-epoch selection.

    Binary tasks train with BCE-with-logits and report validation ROC-AUC
    (higher is better); regression trains with MSE and reports validation MAE
    (lower is better).
    """
    if schema.task is None:
        raise SchemaError("schema has no task; cannot train")
    if frame.target is None:
        raise SchemaError("frame has no materialized target column")
    if model.config.head == "none":
        raise SchemaError("model head is 'none'; training needs a prediction head")
    binary = schema.task is TaskType.binary_classification
    if binary and frame.target.size and not np.all(
        (frame.target == 0.0) | (frame.target == 1.0)
    ):
        raise LabelOutOfRangeError("binary task labels must be 0 or 1")

    train_idx, val_idx = split_rows(frame.num_rows, config.val_fraction, config.seed)
    val_frame = frame_row_select(frame, val_idx)
    metric_name = "roc_auc" if binary else "mae"
    higher_better = binary

    state = AdamState()
    history: list[tuple[int, float, float]] = []
    best_params: dict[str, np.ndarray] | None = None
    best_epoch = -1
    best_metric = -math.inf if higher_better else math.inf

    for epoch in range(config.epochs):
        order = _epoch_order(train_idx, config.seed, epoch)
        total_loss = 0.0
        for batch_index, start in enumerate(range(0, order.size, config.batch_size)):
            rows = order[start: start + config.batch_size]
            batch = frame_row_select(frame, rows)
            with Tape() as tape:
                _, pred = model.forward(batch)
                loss = (
                    bce_with_logits(pred, batch.target)
                    if binary
                    else mse(pred, batch.target)
                )
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise NonFiniteLossError(epoch, batch_index)
            backward(tape, loss)
            adam_step(model.params, state, config)
            total_loss += loss_value * rows.size
        epoch_loss = total_loss / order.size

        _, val_pred = model.forward(val_frame)
        metric = (
            roc_auc(val_pred.data, val_frame.target)
            if binary
            else mae(val_pred.data, val_frame.target)
        )
        history.append((epoch, epoch_loss, metric))
        improved = metric > best_metric if higher_better else metric < best_metric
        if best_params is None or improved:
            best_params = model.snapshot()
            best_epoch = epoch
            best_metric = metric

    assert best_params is not None
    return TrainResult(
        history=history,
        best_params=best_params,
        best_epoch=best_epoch,
        best_metric=best_metric,
        metric_name=metric_name,
    )


def write_history_csv(history: list[tuple[int, float, float]], path: str | Path) -> None:
    lines = ["epoch,train_loss,val_metric"]
    lines += [f"{e},{loss!r},{metric!r}" for e, loss, metric in history]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# --- row-embedding export -----------------------------------------------------------

def export_row_embeddings(model: TabularModel, frame: TensorFrame, path: str | Path) -> np.ndarray:
    """Write pre-head row embeddings ``Z [N, D]`` in the container format.

    Row order matches the frame.  Returns the exported array.
    """
    z, _ = model.forward(frame)
    write_container(
        path,
        PARAMS_MAGIC,
        {"kind": "row_embeddings", "out_channels": int(z.shape[1])},
        {"Z": z.data},
    )
    return z.data


def load_row_embeddings(path: str | Path) -> np.ndarray:
    header, arrays = read_container(path, PARAMS_MAGIC)
    if header.get("kind") != "row_embeddings":
        raise ShapeMismatchError(f"{path} is not a row-embeddings file")
    return arrays["Z"]
