"""Minibatch training loop with an iteration event bus.

The loop is deliberately plain: reshuffle every epoch, slice fixed-size
minibatches (last one short), compute exact gradients, apply SGD or
RMSprop, then hand an :class:`IterationEvent` to every registered hook.
Events fire after the weight update and carry a read-only snapshot of
the flat weights, which is what the trace-based uncertainty estimator
consumes.

When a prune mask is supplied the loop zeroes masked gradients before
the optimizer step and re-zeroes masked weights after it, so pruned
coordinates stay exactly 0.0 bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import make_rng, sample_minibatch
from .data import Dataset
from .errors import AlignmentError, HookError, TrainingDivergedError
from .model import (
    MlpModel,
    batch_loss,
    layer_slices,
    loss_and_layer_grads,
    get_flat_params,
)

OPTIMIZERS = ("sgd", "rmsprop")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    optimizer: str = "rmsprop"
    learning_rate: float = 1e-3
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(
                f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}"
            )
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.rmsprop_decay < 1.0:
            raise ValueError(
                f"rmsprop_decay must be in (0, 1), got {self.rmsprop_decay}"
            )
        if self.rmsprop_epsilon <= 0:
            raise ValueError(
                f"rmsprop_epsilon must be positive, got {self.rmsprop_epsilon}"
            )

    def total_iterations(self, n_examples: int) -> int:
        """Number of weight updates a run makes: epochs * ceil(n / batch)."""
        if n_examples < 1:
            raise ValueError("total_iterations needs a positive example count")
        return self.epochs * math.ceil(n_examples / self.batch_size)


@dataclass(frozen=True)
class IterationEvent:
    """Snapshot published after one weight update.

    ``i_iter`` counts updates from 1; ``flat_weights`` is a read-only
    copy in the model's flat layout; ``loss`` is the minibatch loss the
    update was computed from.
    """

    i_iter: int
    flat_weights: np.ndarray
    loss: float


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: Optional[float] = None
    val_accuracy: Optional[float] = None


@dataclass
class TrainReport:
    """Per-epoch history of a training run."""

    epochs: list[EpochRecord] = field(default_factory=list)
    n_iter: int = 0

    @property
    def final_train_loss(self) -> float:
        if not self.epochs:
            raise ValueError("report is empty (0-epoch run)")
        return self.epochs[-1].train_loss

    def write_csv(self, path) -> None:
        """Write history as CSV with columns epoch, train_loss, val_loss,
        val_accuracy (blank when no validation set was given)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "val_accuracy"])
            for rec in self.epochs:
                writer.writerow(
                    [
                        rec.epoch,
                        f"{rec.train_loss:.10g}",
                        "" if rec.val_loss is None else f"{rec.val_loss:.10g}",
                        "" if rec.val_accuracy is None else f"{rec.val_accuracy:.6f}",
                    ]
                )


@dataclass
class EvalResult:
    loss: float
    accuracy: Optional[float] = None


@dataclass
class OptimizerState:
    """Carrier for RMSprop's squared-gradient caches.

    Pass a fresh instance to capture the caches a run ends with, or one
    holding caches from an earlier run to continue with warm state
    instead of the default cold reset. SGD has no state; it ignores this.
    """

    caches: Optional[list] = None

    def copy(self) -> "OptimizerState":
        if self.caches is None:
            return OptimizerState()
        return OptimizerState([(cw.copy(), cb.copy()) for cw, cb in self.caches])


def evaluate(model: MlpModel, ds: Dataset) -> EvalResult:
    """Mean loss over a dataset, plus accuracy for classification models."""
    out = model.forward(ds.inputs)
    if model.output_kind == "logits":
        loss = batch_loss(model, ds.inputs, ds.labels)
        acc = float(np.mean(out.argmax(axis=1) == ds.labels))
        return EvalResult(loss, acc)
    return EvalResult(batch_loss(model, ds.inputs, ds.labels), None)


def rmsprop_step(param, grad, cache, cfg: TrainConfig):
    """One RMSprop update. Returns the new (param, cache) pair.

    cache' = decay * cache + (1 - decay) * grad^2
    param' = param - lr * grad / (sqrt(cache') + eps)
    """
    cache = cfg.rmsprop_decay * cache + (1.0 - cfg.rmsprop_decay) * grad * grad
    param = param - cfg.learning_rate * grad / (np.sqrt(cache) + cfg.rmsprop_epsilon)
    return param, cache


def _resolve_keep(mask, param_count: int):
    """Accept a PruneMask or a bare boolean vector; None means keep all."""
    if mask is None:
        return None
    keep = np.asarray(getattr(mask, "keep", mask), dtype=bool)
    if keep.shape != (param_count,):
        raise AlignmentError(
            f"mask length {keep.shape} does not match {param_count} parameters"
        )
    if keep.all():
        return None
    return keep


def train(
    model: MlpModel,
    data: Dataset,
    cfg: TrainConfig,
    hooks: Sequence[Callable[[IterationEvent], None]] = (),
    mask=None,
    validation: Optional[Dataset] = None,
    opt_state: Optional[OptimizerState] = None,
) -> TrainReport:
    """Train ``model`` in place and return its per-epoch report.

    A 0-epoch config is a no-op: the model is untouched and no events
    fire. Raises TrainingDivergedError (with the 1-based iteration
    index) the moment a minibatch loss goes non-finite, and HookError if
    any hook raises; both abort the run immediately.
    """
    n = len(data)
    if n < 1:
        raise ValueError("cannot train on an empty dataset")
    if cfg.epochs == 0:
        return TrainReport()
    keep = _resolve_keep(mask, model.param_count)
    slices = layer_slices(model)
    if keep is not None:
        layer_keeps = [
            (keep[ws].reshape(model.layers[k].weight.shape), keep[bs])
            for k, (ws, bs) in enumerate(slices)
        ]
        for (kw, kb), layer in zip(layer_keeps, model.layers):
            layer.weight[~kw] = 0.0
            layer.bias[~kb] = 0.0
    caches = None
    if cfg.optimizer == "rmsprop":
        if opt_state is not None and opt_state.caches is not None:
            caches = opt_state.caches
            for (cw, cb), layer in zip(caches, model.layers):
                if cw.shape != layer.weight.shape or cb.shape != layer.bias.shape:
                    raise AlignmentError(
                        "optimizer state does not match the model's layer shapes"
                    )
        else:
            caches = [
                (np.zeros_like(l.weight), np.zeros_like(l.bias))
                for l in model.layers
            ]
            if opt_state is not None:
                opt_state.caches = caches
    rng = make_rng(cfg.seed)
    hooks = list(hooks)
    report = TrainReport()
    i_iter = 0
    for epoch in range(1, cfg.epochs + 1):
        order = sample_minibatch(rng, n, n, with_replacement=False)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            loss, grads = loss_and_layer_grads(
                model, data.inputs[sel], data.labels[sel]
            )
            i_iter += 1
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} at iteration {i_iter}", i_iter=i_iter
                )
            loss_sum += loss * len(sel)
            for k, layer in enumerate(model.layers):
                gw, gb = grads[k]
                if keep is not None:
                    kw, kb = layer_keeps[k]
                    gw = np.where(kw, gw, 0.0)
                    gb = np.where(kb, gb, 0.0)
                if cfg.optimizer == "sgd":
                    layer.weight -= cfg.learning_rate * gw
                    layer.bias -= cfg.learning_rate * gb
                else:
                    cw, cb = caches[k]
                    layer.weight[...], cw[...] = rmsprop_step(layer.weight, gw, cw, cfg)
                    layer.bias[...], cb[...] = rmsprop_step(layer.bias, gb, cb, cfg)
                if keep is not None:
                    kw, kb = layer_keeps[k]
                    layer.weight[~kw] = 0.0
                    layer.bias[~kb] = 0.0
            if hooks:
                snapshot = get_flat_params(model)
                snapshot.flags.writeable = False
                event = IterationEvent(i_iter=i_iter, flat_weights=snapshot, loss=loss)
                for hook in hooks:
                    try:
                        hook(event)
                    except Exception as exc:
                        name = getattr(hook, "__qualname__", repr(hook))
                        raise HookError(
                            f"hook {name} failed at iteration {i_iter}: {exc}"
                        ) from exc
        record = EpochRecord(epoch=epoch, train_loss=loss_sum / n)
        if validation is not None:
            ev = evaluate(model, validation)
            record.val_loss = ev.loss
            record.val_accuracy = ev.accuracy
        report.epochs.append(record)
    report.n_iter = i_iter
    return report
