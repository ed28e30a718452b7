"""Fully connected network with exact reverse-mode gradients.

The model is a chain of dense layers with ReLU between hidden layers and
a raw final layer: logits for classification (softmax cross entropy) or
a linear map for regression (half squared error, i.e. a unit-variance
gaussian negative log-likelihood). Both losses are negative
log-likelihoods, which is what makes the per-sample score vectors
meaningful to the covariance estimators.

Flat parameter layout
---------------------
Every module that attaches per-weight metadata (uncertainty maps, prune
masks) shares one bijection between (layer, position) and a flat index::

    [W0 row-major | b0 | W1 row-major | b1 | ...]

so weight (r, c) of layer k sits at ``offset_k + r * out_k + c`` and
bias c at ``offset_k + in_k * out_k + c``. The layout is versioned
(``ORDERING_VERSION``) and stamped into every serialized artifact so a
stale sidecar file is rejected instead of silently misaligned.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import make_rng, matmul
from .errors import (
    AlignmentError,
    NonFiniteActivationError,
    ShapeMismatchError,
)

ORDERING_VERSION = "flat-rowmajor-bias-v1"

OUTPUT_KINDS = ("logits", "linear")


@dataclass
class DenseLayer:
    """One dense layer: ``weight`` is (fan_in, fan_out), ``bias`` is (fan_out,)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ShapeMismatchError(
                f"layer weight must be rank 2, got shape {self.weight.shape}"
            )
        if self.bias.shape != (self.weight.shape[1],):
            raise ShapeMismatchError(
                f"bias shape {self.bias.shape} does not match weight "
                f"shape {self.weight.shape}"
            )

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]

    @property
    def param_count(self) -> int:
        return self.weight.size + self.bias.size

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weight.copy(), self.bias.copy())


class MlpModel:
    """A dense ReLU network described by its layer list and output kind."""

    def __init__(self, layers: Sequence[DenseLayer], output_kind: str = "logits"):
        layers = list(layers)
        if not layers:
            raise ValueError("MlpModel needs at least one layer")
        if output_kind not in OUTPUT_KINDS:
            raise ValueError(
                f"output_kind must be one of {OUTPUT_KINDS}, got {output_kind!r}"
            )
        for prev, nxt in zip(layers, layers[1:]):
            if prev.fan_out != nxt.fan_in:
                raise ShapeMismatchError(
                    f"layer chain broken: fan_out {prev.fan_out} feeds "
                    f"fan_in {nxt.fan_in}"
                )
        for k, layer in enumerate(layers):
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise ValueError(f"layer {k} contains non-finite parameters")
        self.layers = layers
        self.output_kind = output_kind

    @classmethod
    def initialized(
        cls, dims: Sequence[int], output_kind: str = "logits", seed: int = 0
    ) -> "MlpModel":
        """Build a model of the given layer widths with fresh parameters.

        Weights draw from uniform(+-sqrt(6 / (fan_in + fan_out))); biases
        start at zero.
        """
        dims = [int(d) for d in dims]
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"dims must list at least two positive widths, got {dims}")
        rng = make_rng(seed)
        layers = []
        for fan_in, fan_out in zip(dims, dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            layers.append(DenseLayer(w, np.zeros(fan_out)))
        return cls(layers, output_kind)

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].fan_in] + [l.fan_out for l in self.layers]

    @property
    def param_count(self) -> int:
        return sum(l.param_count for l in self.layers)

    def copy(self) -> "MlpModel":
        return MlpModel([l.copy() for l in self.layers], self.output_kind)

    def forward(self, x) -> np.ndarray:
        """Map a (batch, fan_in) array to (batch, fan_out) outputs."""
        out, _ = _forward_cache(self, x)
        return out


def _forward_cache(model: MlpModel, x):
    """Run the forward pass keeping per-layer inputs and pre-activations."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatchError(f"input must be rank 2, got shape {a.shape}")
    last = len(model.layers) - 1
    cache = []
    for k, layer in enumerate(model.layers):
        z = matmul(a, layer.weight) + layer.bias
        if not np.all(np.isfinite(z)):
            raise NonFiniteActivationError(
                f"non-finite activation in layer {k}", layer_index=k
            )
        cache.append((a, z))
        a = np.maximum(z, 0.0) if k < last else z
    return a, cache


def _softmax_nll(logits, labels):
    """Per-sample cross-entropy losses and the gradient wrt logits.

    Uses the log-sum-exp shift so large logits cannot overflow.
    """
    n = logits.shape[0]
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeMismatchError(
            f"labels shape {labels.shape} does not match batch size {n}"
        )
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("classification labels must be integers")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError(
            f"label out of range: saw {int(labels.min())}..{int(labels.max())} "
            f"for {logits.shape[1]} classes"
        )
    shift = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - shift)
    total = ex.sum(axis=1, keepdims=True)
    log_probs = (logits - shift) - np.log(total)
    rows = np.arange(n)
    losses = -log_probs[rows, labels]
    dlogits = ex / total
    dlogits[rows, labels] -= 1.0
    return losses, dlogits


def _gaussian_nll(preds, targets):
    """Per-sample half squared errors and the gradient wrt predictions."""
    t = np.asarray(targets, dtype=np.float64)
    if t.ndim == 1:
        t = t[:, None]
    if t.shape != preds.shape:
        raise ShapeMismatchError(
            f"targets shape {t.shape} does not match predictions {preds.shape}"
        )
    diff = preds - t
    losses = 0.5 * (diff * diff).sum(axis=1)
    return losses, diff


LOSS_KINDS = {"logits": "cross_entropy", "linear": "mse"}


def _check_loss_kind(model: MlpModel, loss_kind):
    if loss_kind is not None and loss_kind != LOSS_KINDS[model.output_kind]:
        raise ValueError(
            f"loss_kind {loss_kind!r} does not fit a {model.output_kind!r} head "
            f"(expected {LOSS_KINDS[model.output_kind]!r})"
        )


def _per_sample_loss(model: MlpModel, x, y):
    out, cache = _forward_cache(model, x)
    if model.output_kind == "logits":
        losses, dout = _softmax_nll(out, y)
    else:
        losses, dout = _gaussian_nll(out, y)
    return losses, dout, cache


def _backward(model: MlpModel, cache, dout):
    """Exact gradients for each layer given the gradient wrt the raw output."""
    grads = [None] * len(model.layers)
    d = dout
    for k in range(len(model.layers) - 1, -1, -1):
        a, z = cache[k]
        if k < len(model.layers) - 1:
            d = d * (z > 0.0)
        grads[k] = (matmul(a.T, d), d.sum(axis=0))
        if k > 0:
            d = matmul(d, model.layers[k].weight.T)
    return grads


def loss_and_layer_grads(model: MlpModel, x, y):
    """Mean loss over the batch and per-layer (dW, db) gradient pairs."""
    losses, dout, cache = _per_sample_loss(model, x, y)
    n = losses.shape[0]
    grads = _backward(model, cache, dout / n)
    return float(losses.mean()), grads


def loss_and_grad(model: MlpModel, x, y, loss_kind: str | None = None):
    """Mean loss over the batch and its gradient as one flat vector.

    ``loss_kind`` ("cross_entropy" or "mse") is determined by the model's
    head; passing it explicitly just asserts the expectation.
    """
    _check_loss_kind(model, loss_kind)
    loss, grads = loss_and_layer_grads(model, x, y)
    flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    return loss, flat


def batch_loss(model: MlpModel, x, y) -> float:
    losses, _, _ = _per_sample_loss(model, x, y)
    return float(losses.mean())


def per_sample_score(model: MlpModel, x, y) -> np.ndarray:
    """Score vector (the gradient of one sample's log-likelihood) at x, y.

    The score is the negated gradient of that sample's loss, since both
    supported losses are negative log-likelihoods. For ``linear`` output
    this is the unit-variance gaussian score; divide by the noise
    variance when the model of record has a different one.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] != 1:
        raise ShapeMismatchError(
            f"per_sample_score takes a single example, got batch {x.shape[0]}"
        )
    y = np.asarray(y)
    if y.ndim == 0:
        y = y[None]
    _, flat = loss_and_grad(model, x, y)
    return -flat


def layer_slices(model: MlpModel):
    """(weight_slice, bias_slice) for each layer in the flat layout."""
    out = []
    offset = 0
    for layer in model.layers:
        w_len = layer.weight.size
        b_len = layer.bias.size
        out.append(
            (slice(offset, offset + w_len), slice(offset + w_len, offset + w_len + b_len))
        )
        offset += w_len + b_len
    return out


def flat_layer_ids(model: MlpModel) -> np.ndarray:
    """Layer ordinal of every flat index (biases belong to their layer)."""
    ids = np.empty(model.param_count, dtype=np.int64)
    offset = 0
    for k, layer in enumerate(model.layers):
        ids[offset : offset + layer.param_count] = k
        offset += layer.param_count
    return ids


def get_flat_params(model: MlpModel) -> np.ndarray:
    """Copy the parameters into one flat vector (see module docstring)."""
    return np.concatenate(
        [np.concatenate([l.weight.ravel(), l.bias]) for l in model.layers]
    )


def set_flat_params(model: MlpModel, flat) -> None:
    """Write a flat vector back into the model's layers."""
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (model.param_count,):
        raise AlignmentError(
            f"flat vector has shape {flat.shape}, model has "
            f"{model.param_count} parameters"
        )
    for layer, (ws, bs) in zip(model.layers, layer_slices(model)):
        layer.weight[...] = flat[ws].reshape(layer.weight.shape)
        layer.bias[...] = flat[bs]


def prunable_partition(model: MlpModel, include_biases: bool = False):
    """Flat-index groups that pruning treats as units, one per layer.

    Biases are exempt by default; pass ``include_biases=True`` to fold
    them into their layer's group.
    """
    groups = []
    for ws, bs in layer_slices(model):
        idx = np.arange(ws.start, ws.stop, dtype=np.int64)
        if include_biases:
            idx = np.concatenate([idx, np.arange(bs.start, bs.stop, dtype=np.int64)])
        groups.append(idx)
    return groups


def save_checkpoint(model: MlpModel, path) -> None:
    """Serialize a model to an .npz checkpoint.

    Layout: ``params`` is the flat vector, ``dims`` the layer widths,
    plus the output kind and the flat-ordering version tag. Loading
    refuses a checkpoint whose ordering tag is unknown.
    """
    meta = {"output_kind": model.output_kind, "ordering": ORDERING_VERSION}
    np.savez(
        path,
        params=get_flat_params(model),
        dims=np.asarray(model.dims, dtype=np.int64),
        meta=json.dumps(meta),
    )


def load_checkpoint(path) -> MlpModel:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("ordering") != ORDERING_VERSION:
            raise AlignmentError(
                f"checkpoint ordering {meta.get('ordering')!r} does not match "
                f"{ORDERING_VERSION!r}"
            )
        dims = [int(d) for d in z["dims"]]
        params = np.asarray(z["params"], dtype=np.float64)
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        layers.append(DenseLayer(np.zeros((fan_in, fan_out)), np.zeros(fan_out)))
    model = MlpModel(layers, meta["output_kind"])
    set_flat_params(model, params)
    return model
