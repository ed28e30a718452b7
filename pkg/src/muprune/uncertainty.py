"""Per-weight uncertainty estimators.

Three routes to a standard-deviation-like spread for every weight:

* pseudo bootstrap: record each weight over the last B training
  iterations and take the standard deviation of that window. One
  training run, essentially free.
* full bootstrap: retrain on Efron resamples of the training set from
  fresh initializations and take the per-weight standard deviation
  across replicas.
* analytic maximum-likelihood covariance for convex single-layer heads
  (softmax or linear-gaussian regression): the inverse Fisher
  information, optionally sandwiched with the score covariance when the
  model may be misspecified. Var(w_hat) scales as V / n.

All three produce an :class:`UncertaintyMap` aligned with the model's
flat parameter layout.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import derive_rng, derive_seed
from .data import Dataset, bootstrap_resample
from .errors import (
    AlignmentError,
    BootstrapReplicaError,
    InsufficientIterationsError,
    NonFiniteActivationError,
    TrainingDivergedError,
    UnsupportedModelError,
)
from .model import (
    ORDERING_VERSION,
    MlpModel,
    flat_layer_ids,
    get_flat_params,
    loss_and_grad,
    per_sample_score,
)
from .train import IterationEvent, TrainConfig, TrainReport, train

METHODS = ("pseudo_bootstrap", "bootstrap", "analytic_ml", "analytic_sandwich")

MAX_ANALYTIC_PARAMS = 2000


@dataclass
class UncertaintyMap:
    """A sigma per weight, flat-layout aligned, tagged with its method."""

    sigma: np.ndarray
    method: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.sigma.ndim != 1 or self.sigma.size == 0:
            raise ValueError(
                f"sigma must be a non-empty vector, got shape {self.sigma.shape}"
            )
        if not np.all(np.isfinite(self.sigma)):
            raise ValueError("sigma contains non-finite values")
        if np.any(self.sigma < 0):
            raise ValueError("sigma contains negative values")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")

    def __len__(self) -> int:
        return self.sigma.size

    def save(self, path) -> None:
        """Serialize to .npz: the sigma vector, method, metadata, and the
        flat-ordering tag so misaligned files are rejected on load."""
        np.savez(
            path,
            sigma=self.sigma,
            method=str(self.method),
            meta=json.dumps(self.meta),
            ordering=ORDERING_VERSION,
        )

    @classmethod
    def load(cls, path) -> "UncertaintyMap":
        with np.load(path, allow_pickle=False) as z:
            if str(z["ordering"]) != ORDERING_VERSION:
                raise AlignmentError(
                    f"uncertainty map ordering {str(z['ordering'])!r} does not "
                    f"match {ORDERING_VERSION!r}"
                )
            return cls(
                sigma=np.asarray(z["sigma"], dtype=np.float64),
                method=str(z["method"]),
                meta=json.loads(str(z["meta"])),
            )

    def write_csv(self, path, model: MlpModel) -> None:
        """One row per weight: flat_index, layer_id, sigma, method."""
        ids = flat_layer_ids(model)
        if ids.size != self.sigma.size:
            raise AlignmentError(
                f"sigma has {self.sigma.size} entries, model has {ids.size} "
                "parameters"
            )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["flat_index", "layer_id", "sigma", "method"])
            for j in range(self.sigma.size):
                writer.writerow([j, int(ids[j]), repr(float(self.sigma[j])), self.method])


class WeightTrace:
    """Ring buffer over the most recent flat-weight snapshots.

    ``observe`` is shaped as a training hook: feed it IterationEvents and
    it keeps the last ``capacity`` sampled vectors. ``stride`` keeps only
    every stride-th iteration (by ``i_iter``), widening the window that a
    fixed buffer covers; the default of 1 records every update.
    """

    def __init__(self, param_count: int, capacity: int, stride: int = 1):
        if capacity < 2:
            raise ValueError(f"trace capacity must be at least 2, got {capacity}")
        if stride < 1:
            raise ValueError(f"stride must be at least 1, got {stride}")
        self.param_count = int(param_count)
        self.capacity = int(capacity)
        self.stride = int(stride)
        self._rows = np.empty((capacity, param_count), dtype=np.float64)
        self._iters = np.zeros(capacity, dtype=np.int64)
        self.observed_total = 0  # snapshots accepted after stride filtering

    @property
    def is_full(self) -> bool:
        return self.observed_total >= self.capacity

    def observe(self, event: IterationEvent) -> None:
        if event.flat_weights.shape != (self.param_count,):
            raise AlignmentError(
                f"event carries {event.flat_weights.shape} weights, trace expects "
                f"({self.param_count},)"
            )
        if event.i_iter % self.stride != 0:
            return
        row = self.observed_total % self.capacity
        self._rows[row] = event.flat_weights
        self._iters[row] = event.i_iter
        self.observed_total += 1

    def window(self) -> np.ndarray:
        """The retained snapshots, oldest first, shape (capacity, p)."""
        if not self.is_full:
            raise InsufficientIterationsError(
                f"trace holds {self.observed_total} of {self.capacity} snapshots"
            )
        start = self.observed_total % self.capacity
        return np.roll(self._rows, -start, axis=0)

    def window_iterations(self) -> np.ndarray:
        """i_iter values of the retained snapshots, oldest first."""
        if not self.is_full:
            raise InsufficientIterationsError(
                f"trace holds {self.observed_total} of {self.capacity} snapshots"
            )
        start = self.observed_total % self.capacity
        return np.roll(self._iters, -start)


def train_with_trace(
    model: MlpModel,
    data: Dataset,
    cfg: TrainConfig,
    capacity: int,
    stride: int = 1,
    mask=None,
    validation: Optional[Dataset] = None,
    extra_hooks=(),
    opt_state=None,
):
    """Train while recording the tail window of weight snapshots.

    If the run is shorter than the requested window the trace shrinks to
    cover the whole run, with a warning. Returns (TrainReport, WeightTrace).
    """
    n_iter = cfg.total_iterations(len(data))
    budget = n_iter // stride
    if budget < 2:
        raise InsufficientIterationsError(
            f"run of {n_iter} iterations at stride {stride} yields {budget} "
            "snapshots; a trace needs at least 2"
        )
    if capacity > budget:
        warnings.warn(
            f"trace window {capacity} exceeds the {budget} snapshots this run "
            f"produces; recording all of them",
            stacklevel=2,
        )
        capacity = budget
    trace = WeightTrace(model.param_count, capacity, stride)
    report = train(
        model, data, cfg, hooks=[trace.observe, *extra_hooks],
        mask=mask, validation=validation, opt_state=opt_state,
    )
    return report, trace


def pseudo_bootstrap_sigma(
    trace: WeightTrace, divisor_mode: str = "sample"
) -> UncertaintyMap:
    """Sigma of each weight over the trace window.

    ``divisor_mode`` "sample" divides by B - 1, "population" by B.
    Raises InsufficientIterationsError while the window is not yet full.
    """
    if divisor_mode not in ("sample", "population"):
        raise ValueError(f"unknown divisor_mode {divisor_mode!r}")
    window = trace.window()
    ddof = 1 if divisor_mode == "sample" else 0
    # shift by the first row: mathematically a no-op, but it keeps the
    # std of a constant buffer exactly 0 instead of mean-roundoff dust
    sigma = np.std(window - window[0], axis=0, ddof=ddof)
    return UncertaintyMap(
        sigma=sigma,
        method="pseudo_bootstrap",
        meta={
            "window": trace.capacity,
            "stride": trace.stride,
            "divisor_mode": divisor_mode,
        },
    )


def bootstrap_sigma(
    data: Dataset,
    template: MlpModel,
    cfg: TrainConfig,
    replicas: int,
    seed: int,
    resample: bool = True,
    vary_seeds: bool = True,
    divisor_mode: str = "sample",
) -> UncertaintyMap:
    """Full bootstrap: per-weight sigma across independently trained replicas.

    Each replica r draws its resample, initialization, and shuffle stream
    from seeds split as (seed, r, purpose), so replicas are independent
    and the whole estimate is reproducible from ``seed`` alone.
    ``resample=False`` trains every replica on the original data;
    ``vary_seeds=False`` additionally reuses the template's exact
    initialization and ``cfg.seed`` everywhere, a determinism diagnostic
    under which every replica is identical and sigma is exactly zero.
    """
    if replicas < 2:
        raise ValueError(f"bootstrap needs at least 2 replicas, got {replicas}")
    if divisor_mode not in ("sample", "population"):
        raise ValueError(f"unknown divisor_mode {divisor_mode!r}")
    weights = np.empty((replicas, template.param_count), dtype=np.float64)
    for r in range(replicas):
        data_r = bootstrap_resample(data, derive_rng(seed, r, 0)) if resample else data
        if vary_seeds:
            model_r = MlpModel.initialized(
                template.dims, template.output_kind, seed=derive_seed(seed, r, 1)
            )
            cfg_r = replace(cfg, seed=derive_seed(seed, r, 2))
        else:
            model_r = template.copy()
            cfg_r = cfg
        try:
            train(model_r, data_r, cfg_r)
        except (TrainingDivergedError, NonFiniteActivationError) as exc:
            raise BootstrapReplicaError(
                f"bootstrap replica {r} diverged: {exc}", replica=r
            ) from exc
        weights[r] = get_flat_params(model_r)
    # shifted std: exactly 0 when every replica landed on the same weights
    sigma = np.std(weights - weights[0], axis=0, ddof=1 if divisor_mode == "sample" else 0)
    return UncertaintyMap(
        sigma=sigma,
        method="bootstrap",
        meta={
            "replicas": replicas,
            "seed": int(seed),
            "resample": resample,
            "vary_seeds": vary_seeds,
            "divisor_mode": divisor_mode,
        },
    )


@dataclass
class MlCovariance:
    """Analytic covariance bundle for a convex single-layer model.

    ``fisher`` is the average negative log-likelihood Hessian, and
    ``score_cov`` the average outer product of per-sample scores.
    ``v_ml`` is the parameter covariance: inverse-Fisher / n under
    ``assume_true_model``, otherwise the sandwich
    fisher^-1 score_cov fisher^-1 / n. ``pseudo_inverse_used`` flags a
    rank-deficient Fisher (always the case for a softmax head, whose
    per-class shift direction is unidentified); ``diag_negative_count``
    counts covariance diagonal entries that came out negative and were
    clipped when converting to sigmas.
    """

    fisher: np.ndarray
    score_cov: np.ndarray
    v_ml: np.ndarray
    pseudo_inverse_used: bool
    diag_negative_count: int
    n_examples: int
    assume_true_model: bool
    noise_variance: Optional[float] = None

    @property
    def method(self) -> str:
        return "analytic_ml" if self.assume_true_model else "analytic_sandwich"


def _symmetric_inverse(m: np.ndarray, pivot_tol: float, eig_tol: float):
    """Invert a symmetric PSD matrix, falling back to a pseudo-inverse.

    Primary path: Cholesky factorization, accepted only when the smallest
    squared pivot clears ``pivot_tol`` relative to the largest. Fallback:
    eigendecomposition with eigenvalues below ``eig_tol * max`` dropped.
    Returns (inverse, used_pseudo_inverse).
    """
    try:
        chol = np.linalg.cholesky(m)
        pivots = np.diag(chol) ** 2
        if pivots.min() > pivot_tol * pivots.max():
            inv_chol = np.linalg.inv(chol)
            return inv_chol.T @ inv_chol, False
    except np.linalg.LinAlgError:
        pass
    eigvals, eigvecs = np.linalg.eigh(m)
    cutoff = eig_tol * max(eigvals.max(), 0.0)
    keep = eigvals > cutoff
    if not keep.any():
        raise np.linalg.LinAlgError("matrix has no eigenvalue above the cutoff")
    inv_vals = np.zeros_like(eigvals)
    inv_vals[keep] = 1.0 / eigvals[keep]
    return (eigvecs * inv_vals) @ eigvecs.T, True


def _check_analytic_model(model: MlpModel, max_params: int):
    if len(model.layers) != 1:
        raise UnsupportedModelError(
            f"analytic covariance covers single-layer convex models only, "
            f"got {len(model.layers)} layers"
        )
    if model.param_count > max_params:
        raise ValueError(
            f"analytic covariance is dense O(p^2): {model.param_count} "
            f"parameters exceed the guard of {max_params}"
        )


def _fisher_information(model: MlpModel, data: Dataset, noise_variance: float):
    """Average per-sample NLL Hessian in the flat layout.

    Softmax head: H_i = kron(xt_i xt_i^T, diag(p_i) - p_i p_i^T) with
    xt = [x, 1] so the appended bias row lands after the weight rows,
    matching the flat ordering. Linear-gaussian head:
    H_i = kron(xt_i xt_i^T, I) / noise_variance. Built per class pair to
    keep memory at O(p^2).
    """
    n = len(data)
    xt = np.hstack([data.inputs, np.ones((n, 1))])
    d1 = xt.shape[1]
    k = model.layers[0].fan_out
    p = d1 * k
    if model.output_kind == "linear":
        return np.kron((xt.T @ xt) / n, np.eye(k)) / noise_variance
    logits = model.forward(data.inputs)
    shift = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - shift)
    probs = ex / ex.sum(axis=1, keepdims=True)
    fisher = np.empty((p, p))
    view = fisher.reshape(d1, k, d1, k)
    for c in range(k):
        for cc in range(c, k):
            a = probs[:, c] * ((c == cc) - probs[:, cc])
            block = (xt * a[:, None]).T @ xt / n
            view[:, c, :, cc] = block
            if cc != c:
                view[:, cc, :, c] = block
    return fisher


def analytic_ml_covariance(
    model: MlpModel,
    data: Dataset,
    assume_true_model: bool = False,
    noise_variance: Optional[float] = None,
    max_params: int = MAX_ANALYTIC_PARAMS,
    pivot_tol: float = 1e-12,
    eig_tol: float = 1e-10,
) -> MlCovariance:
    """Fisher, score covariance, and the resulting Var(w_hat) at ``model``.

    Intended for a converged fit. ``assume_true_model`` selects the
    plain inverse-Fisher covariance; otherwise the sandwich form is
    used, which stays consistent under model misspecification.
    ``noise_variance`` applies to linear-gaussian models only; leave it
    None to plug in the maximum-likelihood residual variance.
    """
    _check_analytic_model(model, max_params)
    n = len(data)
    if n < 2:
        raise ValueError(f"analytic covariance needs at least 2 examples, got {n}")
    if model.output_kind == "linear":
        if noise_variance is None:
            targets = np.asarray(data.labels, dtype=np.float64)
            if targets.ndim == 1:
                targets = targets[:, None]
            resid = model.forward(data.inputs) - targets
            noise_variance = float(np.mean(resid**2))
        if noise_variance <= 0:
            raise ValueError(f"noise_variance must be positive, got {noise_variance}")
    else:
        noise_variance = None

    fisher = _fisher_information(model, data, noise_variance or 1.0)
    fisher = 0.5 * (fisher + fisher.T)

    p = model.param_count
    scores = np.empty((n, p))
    for i in range(n):
        scores[i] = per_sample_score(model, data.inputs[i], data.labels[i])
    if noise_variance is not None:
        scores /= noise_variance
    score_cov = scores.T @ scores / n
    score_cov = 0.5 * (score_cov + score_cov.T)

    fisher_inv, used_pinv = _symmetric_inverse(fisher, pivot_tol, eig_tol)
    if assume_true_model:
        v_ml = fisher_inv / n
    else:
        v_ml = fisher_inv @ score_cov @ fisher_inv / n
        v_ml = 0.5 * (v_ml + v_ml.T)
    diag_negative = int(np.sum(np.diag(v_ml) < 0))
    return MlCovariance(
        fisher=fisher,
        score_cov=score_cov,
        v_ml=v_ml,
        pseudo_inverse_used=used_pinv,
        diag_negative_count=diag_negative,
        n_examples=n,
        assume_true_model=assume_true_model,
        noise_variance=noise_variance,
    )


def covariance_to_uncertainty(cov: MlCovariance) -> UncertaintyMap:
    """Per-weight sigmas from the covariance diagonal (negatives clip to 0)."""
    diag = np.diag(cov.v_ml).copy()
    diag[diag < 0] = 0.0
    return UncertaintyMap(
        sigma=np.sqrt(diag),
        method=cov.method,
        meta={
            "n_examples": cov.n_examples,
            "pseudo_inverse_used": cov.pseudo_inverse_used,
            "diag_negative_count": cov.diag_negative_count,
            "noise_variance": cov.noise_variance,
        },
    )


def mean_score_norm(
    model: MlpModel, data: Dataset, noise_variance: float = 1.0
) -> float:
    """Euclidean norm of the mean per-sample score over ``data``.

    Zero at an exact maximum-likelihood fit; useful for checking that a
    model is converged enough for the analytic covariances to mean
    anything. The mean score equals the negated full-batch loss
    gradient, so this costs one gradient evaluation.
    """
    _, grad = loss_and_grad(model, data.inputs, data.labels)
    if model.output_kind == "linear":
        grad = grad / noise_variance
    return float(np.linalg.norm(grad))


def normal_cdf(x: float) -> float:
    """Standard normal CDF via the error function."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def wald_statistic(w_hat, se):
    """z = w_hat / se, elementwise. Zero or negative standard errors are
    a caller bug and raise rather than propagate infinities."""
    w_hat = np.asarray(w_hat, dtype=np.float64)
    se = np.asarray(se, dtype=np.float64)
    if np.any(~np.isfinite(se)) or np.any(se <= 0):
        raise ValueError("standard errors must be finite and positive")
    return w_hat / se


def wald_p_value(z):
    """Two-sided p-value 2 * (1 - Phi(|z|)), elementwise."""
    z_arr = np.asarray(z, dtype=np.float64)
    if np.any(~np.isfinite(z_arr)):
        raise ValueError("wald_p_value needs finite z values")
    flat = np.abs(z_arr.ravel())
    p = np.fromiter(
        (2.0 * (1.0 - normal_cdf(v)) for v in flat), dtype=np.float64, count=flat.size
    )
    if np.isscalar(z) or z_arr.ndim == 0:
        return float(p[0])
    return p.reshape(z_arr.shape)
