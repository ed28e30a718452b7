"""Pruning criteria, masks, and the prune/retrain schedule.

The keep-or-drop score for weight j is

    tau_j = |w_j| / (lambda + sigma_j)

which bridges two classic rules: lambda large recovers magnitude
pruning (``abs``), lambda = 0 recovers the Wald statistic |w| / se
(``wald``). In between (``mu``), a weight survives by being large
relative to both the layer's scale and its own estimated uncertainty.

lambda is never set directly: configs carry a unitless ``lambda_star``
and the engine multiplies it by the (population) standard deviation of
the surviving weights in scope, per layer by default, so one
lambda_star transfers across layers and networks with very different
weight scales.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import derive_seed, reduce_std
from .errors import AlignmentError, PruneRoundError
from .model import MlpModel, get_flat_params, prunable_partition, set_flat_params
from .train import TrainConfig, evaluate, train
from .uncertainty import UncertaintyMap, pseudo_bootstrap_sigma, train_with_trace

CRITERION_KINDS = ("abs", "mu", "wald")
LAMBDA_SCOPES = ("per_layer", "whole_model")


@dataclass
class CriterionConfig:
    """Which score to rank weights by.

    ``uncertainty`` is required for the mu and wald kinds and must align
    with the model's flat layout. ``lambda_scope`` picks where the
    weight-scale multiplier for lambda_star comes from: each layer's own
    surviving weights (default) or all surviving prunable weights pooled.
    """

    kind: str = "abs"
    lambda_star: float = 1.0
    lambda_scope: str = "per_layer"
    uncertainty: Optional[UncertaintyMap] = None

    def __post_init__(self):
        if self.kind not in CRITERION_KINDS:
            raise ValueError(
                f"kind must be one of {CRITERION_KINDS}, got {self.kind!r}"
            )
        if self.lambda_scope not in LAMBDA_SCOPES:
            raise ValueError(
                f"lambda_scope must be one of {LAMBDA_SCOPES}, got {self.lambda_scope!r}"
            )
        if self.kind == "mu":
            if not (self.lambda_star >= 0 and np.isfinite(self.lambda_star)):
                raise ValueError(
                    f"lambda_star must be finite and non-negative, got {self.lambda_star}"
                )
        if self.kind in ("mu", "wald") and self.uncertainty is None:
            raise ValueError(f"criterion kind {self.kind!r} needs an uncertainty map")


@dataclass
class PruneMask:
    """Boolean keep vector over the flat layout plus its application log.

    ``applied_fractions[g]`` lists the percentages handed to
    ``select_prune_set`` for partition group g, in order, so an
    iterative schedule leaves an audit trail. Masks only ever compose
    monotonically: selection never resurrects a dropped weight.
    """

    keep: np.ndarray
    applied_fractions: dict = field(default_factory=dict)

    def __post_init__(self):
        self.keep = np.asarray(self.keep, dtype=bool)
        if self.keep.ndim != 1 or self.keep.size == 0:
            raise ValueError(
                f"keep must be a non-empty boolean vector, got shape {self.keep.shape}"
            )

    @classmethod
    def all_keep(cls, param_count: int) -> "PruneMask":
        return cls(np.ones(param_count, dtype=bool))

    def __len__(self) -> int:
        return self.keep.size

    @property
    def dropped_count(self) -> int:
        return int((~self.keep).sum())

    def survivors(self, group) -> int:
        return int(self.keep[np.asarray(group)].sum())

    def save(self, path) -> None:
        """Serialize to .npz: bit-packed keep vector, its length, the
        application log, and the flat-ordering tag."""
        from .model import ORDERING_VERSION

        np.savez(
            path,
            bits=np.packbits(self.keep),
            length=np.int64(self.keep.size),
            fractions=json.dumps(
                {str(k): v for k, v in self.applied_fractions.items()}
            ),
            ordering=ORDERING_VERSION,
        )

    @classmethod
    def load(cls, path) -> "PruneMask":
        from .model import ORDERING_VERSION

        with np.load(path, allow_pickle=False) as z:
            if str(z["ordering"]) != ORDERING_VERSION:
                raise AlignmentError(
                    f"mask ordering {str(z['ordering'])!r} does not match "
                    f"{ORDERING_VERSION!r}"
                )
            length = int(z["length"])
            keep = np.unpackbits(z["bits"], count=length).astype(bool)
            fractions = {
                int(k): v for k, v in json.loads(str(z["fractions"])).items()
            }
        return cls(keep, fractions)


@dataclass
class ScoreVector:
    """Per-weight keep scores for one criterion evaluation.

    Sentinels: already-pruned weights score -inf (first to go, though
    selection skips them anyway), exact-zero weights score 0, and a
    nonzero weight over a zero denominator scores +inf (kept over
    everything finite). Weights outside the prunable partition score
    +inf as well; they are never candidates.
    """

    tau: np.ndarray
    criterion: CriterionConfig

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=np.float64)
        if self.tau.ndim != 1:
            raise ValueError(f"tau must be a vector, got shape {self.tau.shape}")


def resolve_lambda(lambda_star: float, scope_weights) -> float:
    """lambda = lambda_star * population-std of the weights in scope."""
    scope_weights = np.asarray(scope_weights, dtype=np.float64)
    if scope_weights.size == 0:
        raise ValueError("resolve_lambda: scope contains no weights")
    return float(lambda_star) * reduce_std(scope_weights, divisor_mode="population")


def mu_score(weights, sigma, lam: float) -> np.ndarray:
    """Elementwise |w| / (lam + sigma) with the documented sentinels."""
    w = np.abs(np.asarray(weights, dtype=np.float64))
    denom = float(lam) + np.asarray(sigma, dtype=np.float64)
    if np.any(denom < 0):
        raise ValueError("mu_score: negative denominator")
    out = np.empty_like(w)
    zero_d = denom == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        np.divide(w, denom, out=out, where=~zero_d)
    out[zero_d & (w > 0)] = np.inf
    out[zero_d & (w == 0)] = 0.0
    out[w == 0] = 0.0
    return out


def score(
    flat_weights,
    criterion: CriterionConfig,
    partition: Sequence[np.ndarray],
    prior_keep=None,
) -> ScoreVector:
    """Score every prunable weight under ``criterion``.

    ``partition`` groups flat indices into pruning units (one per layer
    from :func:`muprune.model.prunable_partition`). ``prior_keep`` marks
    weights already pruned; they are excluded from lambda's scope and
    scored -inf.
    """
    w = np.asarray(flat_weights, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError(f"flat_weights must be a vector, got shape {w.shape}")
    p = w.size
    keep = (
        np.ones(p, dtype=bool)
        if prior_keep is None
        else np.asarray(prior_keep, dtype=bool)
    )
    if keep.shape != (p,):
        raise AlignmentError(f"prior_keep shape {keep.shape} does not match p={p}")
    sigma = None
    if criterion.kind in ("mu", "wald"):
        sigma = criterion.uncertainty.sigma
        if sigma.shape != (p,):
            raise AlignmentError(
                f"uncertainty map has {sigma.shape[0]} entries for {p} weights"
            )

    tau = np.full(p, np.inf)
    if criterion.kind == "mu" and criterion.lambda_scope == "whole_model":
        pool = np.concatenate([np.asarray(g) for g in partition])
        pool = pool[keep[pool]]
        shared_lam = resolve_lambda(criterion.lambda_star, w[pool]) if pool.size else 0.0
    for group in partition:
        group = np.asarray(group, dtype=np.int64)
        alive = group[keep[group]]
        if criterion.kind == "abs":
            tau[group] = np.abs(w[group])
        elif criterion.kind == "wald":
            tau[group] = mu_score(w[group], sigma[group], 0.0)
        else:
            if criterion.lambda_scope == "whole_model":
                lam = shared_lam
            else:
                lam = (
                    resolve_lambda(criterion.lambda_star, w[alive])
                    if alive.size
                    else 0.0
                )
            tau[group] = mu_score(w[group], sigma[group], lam)
    tau[~keep] = -np.inf
    return ScoreVector(tau, criterion)


def _round_half_up(x: float) -> int:
    # round-half-away-from-zero for non-negative x; Python's round() ties
    # to even, which would make prune counts depend on parity.
    return int(np.floor(x + 0.5))


def select_prune_set(
    scores: ScoreVector,
    partition: Sequence[np.ndarray],
    a_percent,
    prior_mask: Optional[PruneMask] = None,
) -> PruneMask:
    """Drop the lowest-scoring a% of surviving weights in each group.

    ``a_percent`` is a scalar or one value per group. The count dropped
    from a group is round(a / 100 * survivors); score ties break toward
    dropping the lower flat index. Composition with ``prior_mask`` is
    monotone: nothing already dropped comes back.
    """
    p = scores.tau.size
    if prior_mask is not None and len(prior_mask) != p:
        raise AlignmentError(
            f"prior mask length {len(prior_mask)} does not match {p} scores"
        )
    if np.isscalar(a_percent):
        per_group = [float(a_percent)] * len(partition)
    else:
        per_group = [float(a) for a in a_percent]
        if len(per_group) != len(partition):
            raise ValueError(
                f"{len(per_group)} fractions for {len(partition)} groups"
            )
    for a in per_group:
        if not 0.0 <= a <= 100.0:
            raise ValueError(f"prune percentage must be in [0, 100], got {a}")
    keep = (
        prior_mask.keep.copy() if prior_mask is not None else np.ones(p, dtype=bool)
    )
    fractions = dict(prior_mask.applied_fractions) if prior_mask is not None else {}
    for g, (group, a) in enumerate(zip(partition, per_group)):
        group = np.asarray(group, dtype=np.int64)
        alive = group[keep[group]]
        k = _round_half_up(a / 100.0 * alive.size)
        if k > 0:
            # lexsort: primary key tau, ties by flat index ascending
            order = np.lexsort((alive, scores.tau[alive]))
            keep[alive[order[:k]]] = False
        fractions[g] = list(fractions.get(g, [])) + [a]
    return PruneMask(keep, fractions)


def apply_mask(model: MlpModel, mask: PruneMask) -> MlpModel:
    """Zero dropped weights in place. Survivors keep their exact bits."""
    if len(mask) != model.param_count:
        raise AlignmentError(
            f"mask length {len(mask)} does not match {model.param_count} parameters"
        )
    flat = get_flat_params(model)
    flat[~mask.keep] = 0.0
    set_flat_params(model, flat)
    return model


@dataclass
class RoundMetrics:
    round_index: int
    a_percent: float
    retrain_epochs: int
    survivors: list[int]
    test_loss: Optional[float] = None
    test_accuracy: Optional[float] = None
    wall_time_s: float = 0.0


def iterative_prune(
    model: MlpModel,
    data,
    schedule: Sequence[tuple],
    criterion: CriterionConfig,
    train_cfg: TrainConfig,
    partition: Optional[Sequence[np.ndarray]] = None,
    test_data=None,
    refresh_sigma: bool = True,
    trace_capacity: Optional[int] = None,
    validation=None,
    opt_state=None,
):
    """Alternate prune and retrain rounds over ``schedule``.

    ``schedule`` lists (a_percent, retrain_epochs) pairs; each round
    drops a% of the weights *surviving* that round, retrains under the
    accumulated mask, and (with ``refresh_sigma``, the default) records
    a fresh weight trace during the retrain so the next round's mu/wald
    scores use post-retraining sigmas. lambda is likewise re-resolved
    against surviving weights each round. An ``opt_state`` carrier is
    shared across rounds, so optimizer caches survive from one retrain
    to the next instead of resetting. Returns ``(mask, [RoundMetrics])``;
    the model is pruned in place.
    """
    if partition is None:
        partition = prunable_partition(model)
    needs_sigma = criterion.kind in ("mu", "wald")
    if needs_sigma and refresh_sigma and trace_capacity is None:
        trace_capacity = criterion.uncertainty.meta.get("window")
        if trace_capacity is None:
            raise ValueError(
                "refresh_sigma needs trace_capacity (the uncertainty map does "
                "not record its window size)"
            )
    mask = PruneMask.all_keep(model.param_count)
    current = criterion
    history = []
    for idx, (a_percent, retrain_epochs) in enumerate(schedule):
        t0 = time.perf_counter()
        try:
            sv = score(get_flat_params(model), current, partition, prior_keep=mask.keep)
            mask = select_prune_set(sv, partition, a_percent, prior_mask=mask)
            apply_mask(model, mask)
            cfg_round = replace(
                train_cfg,
                epochs=int(retrain_epochs),
                seed=derive_seed(train_cfg.seed, idx + 1),
            )
            want_refresh = (
                needs_sigma and refresh_sigma
                and idx + 1 < len(schedule) and cfg_round.epochs > 0
            )
            if want_refresh:
                _, trace = train_with_trace(
                    model, data, cfg_round, capacity=trace_capacity,
                    mask=mask, validation=validation, opt_state=opt_state,
                )
                current = replace(
                    current, uncertainty=pseudo_bootstrap_sigma(trace)
                )
            else:
                train(
                    model, data, cfg_round, mask=mask,
                    validation=validation, opt_state=opt_state,
                )
        except Exception as exc:
            raise PruneRoundError(
                f"iterative pruning failed in round {idx}: {exc}", round_index=idx
            ) from exc
        metrics = RoundMetrics(
            round_index=idx,
            a_percent=float(a_percent),
            retrain_epochs=int(retrain_epochs),
            survivors=[mask.survivors(g) for g in partition],
        )
        if test_data is not None:
            ev = evaluate(model, test_data)
            metrics.test_loss = ev.loss
            metrics.test_accuracy = ev.accuracy
        metrics.wall_time_s = time.perf_counter() - t0
        history.append(metrics)
    return mask, history
