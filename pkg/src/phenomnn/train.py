"""Full-batch bilevel training loop with Adam/SGD, dropout, and evaluation.

Every epoch records the unrolled forward pass on a fresh tape, backpropagates
the cross-entropy loss over the labeled training nodes through all T
propagation steps, and applies one optimizer step to every trainable
parameter.  The checkpoint kept is the one with the best validation accuracy.
All randomness (initialization, dropout masks) derives from the configured
seed through PCG64 streams, so a fixed seed reproduces runs exactly.
"""

from __future__ import annotations

import copy
import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, backward
from .hypergraph import build_expansion_operators
from .model import (
    Model,
    ModelConfig,
    build_taped_logits,
    descent_trace,
    forward,
    init_model,
    step_bound_general,
    step_bound_simple,
)

__all__ = [
    "TrainConfig",
    "Metrics",
    "TrainingDiverged",
    "cross_entropy",
    "accuracy",
    "AdamState",
    "adam_step",
    "sgd_step",
    "train",
    "evaluate",
]


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass
class TrainConfig:
    lr: float = 0.01
    dropout: float = 0.0
    epochs: int = 200
    weight_decay: float = 0.0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    early_stop_patience: int = 100
    dropout_inputs: bool = True
    dropout_features: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass
class Metrics:
    """Per-epoch training curves plus the summary of the best checkpoint."""

    loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = 0.0
    final_test_acc: float = 0.0
    wall_time: float = 0.0
    energy_trace: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "epochs_run": len(self.loss),
            "best_epoch": self.best_epoch,
            "best_val_acc": self.best_val_acc,
            "final_test_acc": self.final_test_acc,
            "final_loss": self.loss[-1] if self.loss else None,
            "wall_time": self.wall_time,
            "energy_trace": self.energy_trace,
        }

    def write(self, out_dir) -> None:
        with open(f"{out_dir}/metrics.json", "w", encoding="utf-8") as f:
            json.dump(self.summary(), f, indent=2)
        with open(f"{out_dir}/epochs.csv", "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss", "train_acc", "val_acc", "test_acc", "seconds"])
            for i in range(len(self.loss)):
                w.writerow(
                    [i, self.loss[i], self.train_acc[i], self.val_acc[i], self.test_acc[i], self.seconds[i]]
                )


def cross_entropy(logits: np.ndarray, labels: np.ndarray, rows: np.ndarray) -> float:
    """Mean negative log softmax probability of the true class over ``rows``."""
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("cross_entropy: empty row set")
    sel = np.asarray(logits, dtype=np.float64)[rows]
    labels = np.asarray(labels, dtype=np.int64)
    shifted = sel - sel.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_z - shifted[np.arange(rows.size), labels]))


def accuracy(logits: np.ndarray, labels: np.ndarray, rows: np.ndarray) -> float:
    """Argmax accuracy over ``rows``; ties resolve to the lowest class index."""
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("accuracy: empty row set")
    pred = np.argmax(np.asarray(logits)[rows], axis=1)
    return float(np.mean(pred == np.asarray(labels)[rows]))


# -- optimizers ----------------------------------------------------------------


@dataclass(eq=False)
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig) -> None:
    """Standard bias-corrected Adam update, applied in place."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    for name, p in params.items():
        g = grads[name]
        if config.weight_decay:
            g = g + config.weight_decay * p
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1**state.t)
        v_hat = state.v[name] / (1.0 - b2**state.t)
        p -= config.lr * m_hat / (np.sqrt(v_hat) + config.eps)


def sgd_step(params: dict, grads: dict, config: TrainConfig) -> None:
    for name, p in params.items():
        g = grads[name]
        if config.weight_decay:
            g = g + config.weight_decay * p
        p -= config.lr * g


def _dropout_mask(rng, shape, rate: float) -> np.ndarray:
    # inverted dropout: kept units are rescaled so expectations match eval mode
    keep = rng.random(shape) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


def train(dataset, model_config: ModelConfig, train_config: TrainConfig, out_dir=None):
    """Run the full training loop; returns the best-validation model and metrics."""
    train_rows = dataset.split_indices("train")
    if train_rows.size == 0:
        raise ValueError("dataset has an empty train split")
    val_rows = dataset.split_indices("val")
    test_rows = dataset.split_indices("test")

    ops = build_expansion_operators(dataset.hypergraph, model_config.lambda0, model_config.lambda1)
    model = init_model(
        model_config, dataset.features.shape[1], dataset.n_classes, seed=train_config.seed
    )
    if model_config.strict_alpha:
        bound = (
            step_bound_simple(ops)
            if model_config.variant == "simple"
            else step_bound_general(ops, model.params)
        )
        if model_config.alpha >= bound.value:
            raise ValueError(
                f"alpha={model_config.alpha} violates the convergence bound {bound.value:.6g}"
            )

    params = model.parameters()
    state = AdamState.for_params(params)
    rng = np.random.Generator(np.random.PCG64(train_config.seed))
    labels = dataset.labels
    x = dataset.features

    metrics = Metrics()
    best_snapshot = None
    start = time.perf_counter()
    for epoch in range(train_config.epochs):
        tick = time.perf_counter()
        input_mask = feature_mask = None
        if train_config.dropout > 0.0:
            if train_config.dropout_inputs:
                input_mask = _dropout_mask(rng, x.shape, train_config.dropout)
            if train_config.dropout_features:
                feature_mask = _dropout_mask(
                    rng, (x.shape[0], model_config.d), train_config.dropout
                )
        tape = Tape()
        logits_var = build_taped_logits(tape, model, ops, x, input_mask, feature_mask)
        loss_var = tape.softmax_cross_entropy(logits_var, labels[train_rows], train_rows)
        loss = float(loss_var.value)
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"loss became {loss} at epoch {epoch}; lower lr or alpha (bound may help)"
            )
        grads = backward(tape, loss_var)
        if train_config.optimizer == "adam":
            adam_step(params, grads, state, train_config)
        else:
            sgd_step(params, grads, train_config)

        _, eval_logits = forward(x, model, ops)
        metrics.loss.append(loss)
        metrics.train_acc.append(accuracy(eval_logits, labels, train_rows))
        metrics.val_acc.append(accuracy(eval_logits, labels, val_rows) if val_rows.size else 0.0)
        metrics.test_acc.append(accuracy(eval_logits, labels, test_rows) if test_rows.size else 0.0)
        metrics.seconds.append(time.perf_counter() - tick)

        gate = metrics.val_acc[-1] if val_rows.size else metrics.train_acc[-1]
        if best_snapshot is None or gate > metrics.best_val_acc:
            metrics.best_val_acc = gate
            metrics.best_epoch = epoch
            best_snapshot = copy.deepcopy(model)
        if epoch - metrics.best_epoch >= train_config.early_stop_patience:
            break

    metrics.wall_time = time.perf_counter() - start
    best = best_snapshot if best_snapshot is not None else model
    metrics.final_test_acc = (
        metrics.test_acc[metrics.best_epoch] if test_rows.size else metrics.train_acc[metrics.best_epoch]
    )
    fx = best.predictor.apply(x)
    metrics.energy_trace = [
        {"iteration": t, "energy": e, "feasible": feas, "grad_norm": g}
        for t, e, feas, g in descent_trace(
            fx,
            fx,
            ops,
            best.params,
            dataset.hypergraph,
            steps=model_config.t_layers,
            variant=model_config.variant,
            relu=model_config.relu_mode == "every_step",
        )
    ]
    if out_dir is not None:
        metrics.write(out_dir)
    return best, metrics


def evaluate(model: Model, dataset, split: str) -> float:
    """Accuracy of the checkpointed model on one split."""
    if split not in ("train", "val", "test"):
        raise ValueError(f"unknown split {split!r}")
    rows = dataset.split_indices(split)
    if rows.size == 0:
        raise ValueError(f"split {split!r} is empty")
    ops = build_expansion_operators(dataset.hypergraph, model.config.lambda0, model.config.lambda1)
    _, logits = forward(dataset.features, model, ops)
    return accuracy(logits, dataset.labels, rows)
