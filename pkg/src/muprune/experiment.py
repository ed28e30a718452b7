"""Prune-and-retrain comparison harness.

One experiment trains R base models, prunes each to every sparsity level
under every criterion, retrains, and scores test accuracy. The design is
paired: repetition r derives all its seeds from hash(config seed, r), so
every criterion prunes the same base model and retrains with the same
shuffle stream, and per-repetition differences are attributable to the
criterion alone.

Result rows are plain data; ``emit_outputs`` writes them as CSV. Wall
times go to their own file so the results table is byte-identical across
reruns of the same config.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import derive_rng, derive_seed
from .data import SplitSpec, load_mnist, synth_blobs, train_validation_split
from .model import MlpModel, get_flat_params, prunable_partition, set_flat_params
from .pruning import CriterionConfig, apply_mask, iterative_prune, score, select_prune_set
from .train import OptimizerState, TrainConfig, evaluate, train
from .uncertainty import bootstrap_sigma, pseudo_bootstrap_sigma, train_with_trace

CRITERIA = ("abs", "mu_pboot", "mu_boot", "wald")

RESULTS_HEADER = [
    "repetition",
    "criterion",
    "level",
    "test_accuracy_pruned",
    "test_accuracy_unpruned",
    "accuracy_drop",
]


@dataclass
class ExperimentConfig:
    """Everything a run depends on, JSON round-trippable.

    ``dataset`` is a kind-tagged dict: ``{"kind": "mnist", "dir": ...,
    "train": 5400, "validation": 600}`` (balanced subset carved from the
    training pool; the IDX test pair scores accuracy) or ``{"kind":
    "blobs", "n_train": ..., "n_validation": ..., "n_test": ...,
    "features": ..., "classes": ..., "spread": ...}`` for a synthetic
    smoke set. ``levels`` are prune percentages; ``criteria`` name the
    compared rules; ``lambda_star`` maps criterion name to its
    multiplier (default 1.0).

    Retraining resets optimizer state by default; ``carry_optimizer_state``
    resumes the base run's RMSprop caches instead. ``retrain_learning_rate``
    overrides the training rate during retraining (None reuses it).

    In iterative mode, rounds normally land exactly on ``levels``;
    ``round_levels`` inserts extra cumulative stops (it must contain every
    reporting level), so a harsh final jump can be taken in smaller steps
    while rows are still emitted only at ``levels``.
    """

    dataset: dict
    widths: list
    train: TrainConfig
    retrain_epochs: int
    levels: list
    criteria: list
    repetitions: int
    seed: int = 0
    lambda_star: dict = field(default_factory=dict)
    lambda_scope: str = "per_layer"
    trace_window: int = 200
    trace_stride: int = 1
    bootstrap_replicas: int = 0
    iterative: bool = False
    round_levels: Optional[list] = None
    include_biases: bool = False
    carry_optimizer_state: bool = False
    retrain_learning_rate: Optional[float] = None

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        self.levels = [float(a) for a in self.levels]
        self.widths = [int(w) for w in self.widths]
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be positive, got {self.repetitions}")
        if self.retrain_epochs < 0:
            raise ValueError(
                f"retrain_epochs must be non-negative, got {self.retrain_epochs}"
            )
        if self.retrain_learning_rate is not None and not self.retrain_learning_rate > 0:
            raise ValueError(
                f"retrain_learning_rate must be positive, "
                f"got {self.retrain_learning_rate}"
            )
        if not self.levels:
            raise ValueError("levels must not be empty")
        for a in self.levels:
            if not 0.0 <= a <= 100.0:
                raise ValueError(f"level {a} outside [0, 100]")
        if self.iterative and sorted(self.levels) != self.levels:
            raise ValueError("iterative mode needs levels in increasing order")
        if self.round_levels is not None:
            if not self.iterative:
                raise ValueError("round_levels only applies to iterative mode")
            self.round_levels = [float(a) for a in self.round_levels]
            if sorted(self.round_levels) != self.round_levels:
                raise ValueError("round_levels must be increasing")
            missing = [a for a in self.levels if a not in self.round_levels]
            if missing:
                raise ValueError(
                    f"round_levels must include every reporting level, missing {missing}"
                )
            for a in self.round_levels:
                if not 0.0 <= a <= 100.0:
                    raise ValueError(f"round level {a} outside [0, 100]")
        for name in self.criteria:
            if name not in CRITERIA:
                raise ValueError(f"unknown criterion {name!r}, valid: {CRITERIA}")
        if not self.criteria:
            raise ValueError("criteria must not be empty")
        if "mu_boot" in self.criteria and self.bootstrap_replicas < 2:
            raise ValueError("mu_boot needs bootstrap_replicas >= 2")

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls(**json.loads(text))


@dataclass
class ResultRow:
    """One cell of the grid. ``accuracy_drop`` is pruned minus unpruned
    test accuracy, so harmless pruning sits near 0 and damage is negative."""

    repetition: int
    criterion: str
    level: float
    test_accuracy_pruned: float
    test_accuracy_unpruned: float
    accuracy_drop: float
    wall_time_s: Optional[float] = None


@dataclass
class CellFailure:
    repetition: int
    criterion: str
    level: Optional[float]
    error: str


@dataclass
class SummaryRow:
    criterion: str
    level: float
    n: int
    mean_drop: float
    se_drop: Optional[float]
    wins_vs_abs: Optional[int] = None
    losses_vs_abs: Optional[int] = None
    ties_vs_abs: Optional[int] = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    failures: list

    @property
    def ok(self) -> bool:
        return not self.failures


def _load_experiment_data(cfg: ExperimentConfig):
    spec = dict(cfg.dataset)
    kind = spec.pop("kind", None)
    if kind == "mnist":
        pool = load_mnist(spec.get("dir"), split="train")
        test = load_mnist(spec.get("dir"), split="test")
        split = SplitSpec(
            train=int(spec.get("train", 5400)),
            validation=int(spec.get("validation", 600)),
            balanced=True,
            seed=derive_seed(cfg.seed, 9000),
        )
        train_ds, val_ds = train_validation_split(pool, split)
        return train_ds, val_ds, test
    if kind == "blobs":
        d = int(spec.get("features", 16))
        classes = int(spec.get("classes", 4))
        spread = float(spec.get("spread", 1.0))
        n_train = int(spec.get("n_train", 512))
        n_val = int(spec.get("n_validation", 128))
        n_test = int(spec.get("n_test", 256))
        # one generation so all three splits share the same class centers
        pool = synth_blobs(
            n_train + n_val + n_test, d, classes,
            derive_rng(cfg.seed, 9000), spread=spread,
        )
        idx = np.arange(len(pool))
        return (
            pool.subset(idx[:n_train], name="blobs-train"),
            pool.subset(idx[n_train : n_train + n_val], name="blobs-val"),
            pool.subset(idx[n_train + n_val :], name="blobs-test"),
        )
    raise ValueError(f"unknown dataset kind {kind!r}")


def _criterion_for(name: str, cfg: ExperimentConfig, sigmas: dict) -> CriterionConfig:
    lam = float(cfg.lambda_star.get(name, 1.0))
    if name == "abs":
        return CriterionConfig(kind="abs")
    if name == "wald":
        # Wald reuses the trace sigma as its standard-error stand-in and
        # is exactly mu with lambda = 0.
        return CriterionConfig(
            kind="wald", lambda_scope=cfg.lambda_scope, uncertainty=sigmas["pboot"]
        )
    if name == "mu_pboot":
        return CriterionConfig(
            kind="mu", lambda_star=lam, lambda_scope=cfg.lambda_scope,
            uncertainty=sigmas["pboot"],
        )
    if name == "mu_boot":
        return CriterionConfig(
            kind="mu", lambda_star=lam, lambda_scope=cfg.lambda_scope,
            uncertainty=sigmas["boot"],
        )
    raise ValueError(f"unknown criterion {name!r}")


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentResult:
    """Run the full repetition x criterion x level grid.

    ``progress`` is an optional callable fed short status strings. Cell
    failures are recorded and skipped rather than aborting the grid.
    Rows come back ordered by (repetition, criterion, level); the whole
    run is a deterministic function of the config.
    """
    say = progress if progress is not None else (lambda msg: None)
    train_ds, val_ds, test_ds = _load_experiment_data(cfg)
    needs_pboot = any(c in ("mu_pboot", "wald") for c in cfg.criteria)
    needs_boot = "mu_boot" in cfg.criteria
    probe = MlpModel.initialized(cfg.widths, "logits", seed=0)
    partition = prunable_partition(probe, include_biases=cfg.include_biases)
    rows, failures = [], []
    for rep in range(cfg.repetitions):
        rep_seed = derive_seed(cfg.seed, rep)
        opt_state = OptimizerState() if cfg.carry_optimizer_state else None
        try:
            base = MlpModel.initialized(
                cfg.widths, "logits", seed=derive_seed(rep_seed, 1)
            )
            base_cfg = replace(cfg.train, seed=derive_seed(rep_seed, 2))
            say(f"rep {rep}: training base model")
            sigmas = {}
            if needs_pboot:
                _, trace = train_with_trace(
                    base, train_ds, base_cfg,
                    capacity=cfg.trace_window, stride=cfg.trace_stride,
                    validation=val_ds, opt_state=opt_state,
                )
                sigmas["pboot"] = pseudo_bootstrap_sigma(trace)
            else:
                train(base, train_ds, base_cfg, validation=val_ds, opt_state=opt_state)
            if needs_boot:
                say(f"rep {rep}: bootstrap replicas")
                sigmas["boot"] = bootstrap_sigma(
                    train_ds, base, base_cfg,
                    replicas=cfg.bootstrap_replicas, seed=derive_seed(rep_seed, 3),
                )
            base_flat = get_flat_params(base)
            base_acc = evaluate(base, test_ds).accuracy
        except Exception as exc:
            # the whole repetition depends on this stage; log once, move on
            failures.append(CellFailure(rep, "base", None, str(exc)))
            continue
        for crit_name in cfg.criteria:
            try:
                criterion = _criterion_for(crit_name, cfg, sigmas)
            except Exception as exc:
                failures.append(CellFailure(rep, crit_name, None, str(exc)))
                continue
            say(f"rep {rep}: pruning with {crit_name}")
            if cfg.iterative:
                rows_c, fails_c = _run_iterative_cells(
                    cfg, rep, rep_seed, crit_name, criterion, base_flat, base_acc,
                    partition, train_ds, val_ds, test_ds, opt_state,
                )
            else:
                rows_c, fails_c = _run_oneshot_cells(
                    cfg, rep, rep_seed, crit_name, criterion, base_flat, base_acc,
                    partition, train_ds, val_ds, test_ds, opt_state,
                )
            rows.extend(rows_c)
            failures.extend(fails_c)
    return ExperimentResult(config=cfg, rows=rows, failures=failures)


def _fresh_model(cfg: ExperimentConfig, base_flat) -> MlpModel:
    model = MlpModel.initialized(cfg.widths, "logits", seed=0)
    set_flat_params(model, base_flat)
    return model


def _retrain_config(cfg: ExperimentConfig, epochs: int, seed: int) -> TrainConfig:
    lr = (
        cfg.retrain_learning_rate
        if cfg.retrain_learning_rate is not None
        else cfg.train.learning_rate
    )
    return replace(cfg.train, epochs=epochs, learning_rate=lr, seed=seed)


def _run_oneshot_cells(
    cfg, rep, rep_seed, crit_name, criterion, base_flat, base_acc,
    partition, train_ds, val_ds, test_ds, opt_state,
):
    rows, failures = [], []
    for li, level in enumerate(cfg.levels):
        t0 = time.perf_counter()
        try:
            model = _fresh_model(cfg, base_flat)
            sv = score(base_flat, criterion, partition)
            mask = select_prune_set(sv, partition, level)
            apply_mask(model, mask)
            # retrain seed shared across criteria: the comparison is paired
            retrain_cfg = _retrain_config(
                cfg, cfg.retrain_epochs, derive_seed(rep_seed, 4, li)
            )
            train(
                model, train_ds, retrain_cfg, mask=mask, validation=val_ds,
                opt_state=opt_state.copy() if opt_state is not None else None,
            )
            acc = evaluate(model, test_ds).accuracy
        except Exception as exc:
            failures.append(CellFailure(rep, crit_name, level, str(exc)))
            continue
        rows.append(
            ResultRow(
                repetition=rep,
                criterion=crit_name,
                level=level,
                test_accuracy_pruned=acc,
                test_accuracy_unpruned=base_acc,
                accuracy_drop=acc - base_acc,
                wall_time_s=time.perf_counter() - t0,
            )
        )
    return rows, failures


def _iterative_schedule(levels, retrain_epochs):
    """Convert cumulative prune levels into per-round fractions.

    Reaching cumulative c_i from c_{i-1} means dropping
    (c_i - c_{i-1}) / (1 - c_{i-1}) of the survivors.
    """
    schedule = []
    prev = 0.0
    for level in levels:
        c = level / 100.0
        p = 0.0 if c <= prev else (c - prev) / (1.0 - prev)
        schedule.append((100.0 * p, retrain_epochs))
        prev = c
    return schedule


def _run_iterative_cells(
    cfg, rep, rep_seed, crit_name, criterion, base_flat, base_acc,
    partition, train_ds, val_ds, test_ds, opt_state,
):
    model = _fresh_model(cfg, base_flat)
    round_levels = cfg.round_levels if cfg.round_levels is not None else cfg.levels
    schedule = _iterative_schedule(round_levels, cfg.retrain_epochs)
    train_cfg = _retrain_config(cfg, cfg.train.epochs, derive_seed(rep_seed, 4))
    try:
        _, history = iterative_prune(
            model, train_ds, schedule, criterion, train_cfg,
            partition=partition, test_data=test_ds,
            trace_capacity=cfg.trace_window if criterion.kind != "abs" else None,
            validation=val_ds,
            opt_state=opt_state.copy() if opt_state is not None else None,
        )
    except Exception as exc:
        return [], [CellFailure(rep, crit_name, None, str(exc))]
    reported = set(cfg.levels)
    rows = []
    for level, metrics in zip(round_levels, history):
        if level not in reported:
            continue
        rows.append(
            ResultRow(
                repetition=rep,
                criterion=crit_name,
                level=level,
                test_accuracy_pruned=metrics.test_accuracy,
                test_accuracy_unpruned=base_acc,
                accuracy_drop=metrics.test_accuracy - base_acc,
                wall_time_s=metrics.wall_time_s,
            )
        )
    return rows, []


def summarize(rows) -> list:
    """Aggregate result rows into per (criterion, level) summary rows.

    Mean and standard error of the accuracy drop, plus paired win/loss/
    tie counts against the ``abs`` baseline where it is present. A pair
    ties when the pruned accuracies differ by less than 1e-12.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("summarize needs at least one result row")
    by_cell = {}
    for r in rows:
        by_cell.setdefault((r.criterion, r.level), []).append(r)
    abs_acc = {
        (r.repetition, r.level): r.test_accuracy_pruned
        for r in rows
        if r.criterion == "abs"
    }
    criteria = []
    for r in rows:
        if r.criterion not in criteria:
            criteria.append(r.criterion)
    levels = sorted({r.level for r in rows})
    out = []
    for crit in criteria:
        for level in levels:
            cell = by_cell.get((crit, level))
            if not cell:
                continue
            drops = np.array([r.accuracy_drop for r in cell])
            se = (
                float(np.std(drops, ddof=1) / np.sqrt(len(drops)))
                if len(drops) > 1
                else None
            )
            row = SummaryRow(
                criterion=crit,
                level=level,
                n=len(drops),
                mean_drop=float(drops.mean()),
                se_drop=se,
            )
            if crit != "abs" and abs_acc:
                wins = losses = ties = 0
                for r in cell:
                    other = abs_acc.get((r.repetition, r.level))
                    if other is None:
                        continue
                    delta = r.test_accuracy_pruned - other
                    if abs(delta) < 1e-12:
                        ties += 1
                    elif delta > 0:
                        wins += 1
                    else:
                        losses += 1
                row.wins_vs_abs = wins
                row.losses_vs_abs = losses
                row.ties_vs_abs = ties
            out.append(row)
    return out


def _fmt_level(level: float) -> str:
    return f"{level:g}"


def emit_outputs(result: ExperimentResult, outdir) -> dict:
    """Write results.csv, timings.csv, summary.csv, drop_vs_level.csv and
    the config echo under ``outdir``. Returns {name: path}.

    results.csv holds only deterministic columns (accuracies to six
    decimal places); wall times live in timings.csv so rerunning the
    same config reproduces results.csv byte for byte.
    """
    os.makedirs(outdir, exist_ok=True)
    paths = {}

    paths["results"] = os.path.join(outdir, "results.csv")
    with open(paths["results"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULTS_HEADER)
        for r in result.rows:
            w.writerow(
                [
                    r.repetition,
                    r.criterion,
                    _fmt_level(r.level),
                    f"{r.test_accuracy_pruned:.6f}",
                    f"{r.test_accuracy_unpruned:.6f}",
                    f"{r.accuracy_drop:.6f}",
                ]
            )

    paths["timings"] = os.path.join(outdir, "timings.csv")
    with open(paths["timings"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["repetition", "criterion", "level", "wall_time_s"])
        for r in result.rows:
            if r.wall_time_s is not None:
                w.writerow(
                    [r.repetition, r.criterion, _fmt_level(r.level), f"{r.wall_time_s:.3f}"]
                )

    # aggregates only exist when at least one cell survived
    if result.rows:
        paths["summary"] = os.path.join(outdir, "summary.csv")
        write_summary_csv(summarize(result.rows), paths["summary"])

        paths["drop_vs_level"] = os.path.join(outdir, "drop_vs_level.csv")
        _write_drop_vs_level(result.rows, paths["drop_vs_level"])

    paths["config"] = os.path.join(outdir, "config.json")
    with open(paths["config"], "w") as fh:
        fh.write(result.config.to_json() + "\n")

    if result.failures:
        paths["failures"] = os.path.join(outdir, "failures.csv")
        with open(paths["failures"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["repetition", "criterion", "level", "error"])
            for f in result.failures:
                w.writerow(
                    [
                        f.repetition,
                        f.criterion,
                        "" if f.level is None else _fmt_level(f.level),
                        f.error,
                    ]
                )
    return paths


def write_summary_csv(summary_rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "criterion",
                "level",
                "n",
                "mean_accuracy_drop",
                "se_accuracy_drop",
                "wins_vs_abs",
                "losses_vs_abs",
                "ties_vs_abs",
            ]
        )
        for s in summary_rows:
            w.writerow(
                [
                    s.criterion,
                    _fmt_level(s.level),
                    s.n,
                    f"{s.mean_drop:.6f}",
                    "" if s.se_drop is None else f"{s.se_drop:.6f}",
                    "" if s.wins_vs_abs is None else s.wins_vs_abs,
                    "" if s.losses_vs_abs is None else s.losses_vs_abs,
                    "" if s.ties_vs_abs is None else s.ties_vs_abs,
                ]
            )


def _write_drop_vs_level(rows, path) -> None:
    """Plot-friendly wide table: one line per level, mean drop per criterion."""
    summary = summarize(rows)
    criteria = []
    for s in summary:
        if s.criterion not in criteria:
            criteria.append(s.criterion)
    levels = sorted({s.level for s in summary})
    cells = {(s.criterion, s.level): s.mean_drop for s in summary}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level"] + [f"mean_drop_{c}" for c in criteria])
        for level in levels:
            line = [_fmt_level(level)]
            for c in criteria:
                v = cells.get((c, level))
                line.append("" if v is None else f"{v:.6f}")
            w.writerow(line)


def read_results_csv(path) -> list:
    """Parse a results.csv written by ``emit_outputs`` back into rows."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in RESULTS_HEADER if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for rec in reader:
            rows.append(
                ResultRow(
                    repetition=int(rec["repetition"]),
                    criterion=rec["criterion"],
                    level=float(rec["level"]),
                    test_accuracy_pruned=float(rec["test_accuracy_pruned"]),
                    test_accuracy_unpruned=float(rec["test_accuracy_unpruned"]),
                    accuracy_drop=float(rec["accuracy_drop"]),
                )
            )
    return rows
