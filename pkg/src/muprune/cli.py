"""Command line entry points.

Subcommands mirror the library workflow: ``train`` a model, estimate
per-weight ``uncertainty``, ``prune`` a checkpoint, run a full
``experiment`` grid from a JSON config, and ``summarize`` a results
table. Every command exits 0 only on full success.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .core import make_rng
from .data import DATA_DIR_ENV, SplitSpec, load_mnist, synth_blobs, train_validation_split
from .errors import AlignmentError
from .experiment import (
    ExperimentConfig,
    emit_outputs,
    read_results_csv,
    run_experiment,
    summarize,
    write_summary_csv,
)
from .model import MlpModel, load_checkpoint, save_checkpoint
from .pruning import (
    CriterionConfig,
    PruneMask,
    apply_mask,
    prunable_partition,
    score,
    select_prune_set,
)
from .train import TrainConfig, evaluate, train
from .uncertainty import (
    UncertaintyMap,
    analytic_ml_covariance,
    bootstrap_sigma,
    covariance_to_uncertainty,
    mean_score_norm,
    pseudo_bootstrap_sigma,
    train_with_trace,
)


def _parse_ints(text: str) -> list:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _parse_floats(text: str) -> list:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--data-dir",
        help=f"directory with MNIST-format IDX files (default: ${DATA_DIR_ENV})",
    )
    p.add_argument(
        "--subset", type=int, default=0,
        help="balanced training subset size (0 = whole pool)",
    )
    p.add_argument(
        "--validation", type=int, default=0,
        help="examples carved out of the subset for validation",
    )
    p.add_argument(
        "--blobs", metavar="N,D,CLASSES[,SPREAD]",
        help="use a synthetic gaussian-blob set instead of IDX files",
    )
    p.add_argument("--data-seed", type=int, default=0)


def _load_cli_data(args):
    """Returns (train_ds, val_ds_or_None)."""
    if args.blobs:
        parts = _parse_floats(args.blobs)
        if len(parts) not in (3, 4):
            raise ValueError("--blobs wants N,D,CLASSES[,SPREAD]")
        n, d, classes = (int(v) for v in parts[:3])
        spread = parts[3] if len(parts) == 4 else 1.0
        ds = synth_blobs(n, d, classes, make_rng(args.data_seed), spread=spread)
        if args.validation:
            return train_validation_split(
                ds, SplitSpec(len(ds) - args.validation, args.validation,
                              seed=args.data_seed)
            )
        return ds, None
    pool = load_mnist(args.data_dir, split="train")
    if args.subset:
        return train_validation_split(
            pool,
            SplitSpec(
                train=args.subset - args.validation,
                validation=args.validation,
                balanced=True,
                seed=args.data_seed,
            ),
        )
    if args.validation:
        return train_validation_split(
            pool, SplitSpec(len(pool) - args.validation, args.validation,
                            seed=args.data_seed)
        )
    return pool, None


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--optimizer", choices=("sgd", "rmsprop"), default="rmsprop")
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--rmsprop-decay", type=float, default=0.9)
    p.add_argument("--rmsprop-epsilon", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        optimizer=args.optimizer,
        learning_rate=args.learning_rate,
        rmsprop_decay=args.rmsprop_decay,
        rmsprop_epsilon=args.rmsprop_epsilon,
        seed=args.seed,
    )


def _cmd_train(args) -> int:
    train_ds, val_ds = _load_cli_data(args)
    if args.init_model:
        model = load_checkpoint(args.init_model)
    else:
        if not args.widths:
            raise ValueError("--widths is required unless --init-model is given")
        widths = _parse_ints(args.widths)
        model = MlpModel.initialized(widths, "logits", seed=args.seed)
    mask = PruneMask.load(args.mask) if args.mask else None
    cfg = _train_config(args)
    if args.trace_window:
        report, trace = train_with_trace(
            model, train_ds, cfg, capacity=args.trace_window,
            mask=mask, validation=val_ds,
        )
        if args.sigma_out:
            pseudo_bootstrap_sigma(trace).save(args.sigma_out)
            print(f"wrote sigma map to {args.sigma_out}")
    else:
        if args.sigma_out:
            raise ValueError("--sigma-out needs --trace-window")
        report = train(model, train_ds, cfg, mask=mask, validation=val_ds)
    if args.out_model:
        save_checkpoint(model, args.out_model)
        print(f"wrote checkpoint to {args.out_model}")
    if args.report:
        report.write_csv(args.report)
        print(f"wrote training report to {args.report}")
    if report.epochs:
        last = report.epochs[-1]
        line = f"final train loss {last.train_loss:.6f}"
        if last.val_accuracy is not None:
            line += f", validation accuracy {last.val_accuracy:.6f}"
        print(line)
    else:
        print("0-epoch run: model unchanged")
    return 0


def _cmd_uncertainty(args) -> int:
    train_ds, val_ds = _load_cli_data(args)
    cfg = _train_config(args)
    if args.method == "pboot":
        if not args.widths:
            raise ValueError("--widths is required for pboot")
        model = MlpModel.initialized(_parse_ints(args.widths), "logits", seed=args.seed)
        _, trace = train_with_trace(
            model, train_ds, cfg, capacity=args.trace_window, validation=val_ds
        )
        umap = pseudo_bootstrap_sigma(trace)
        if args.out_model:
            save_checkpoint(model, args.out_model)
    elif args.method == "boot":
        if not args.widths:
            raise ValueError("--widths is required for boot")
        template = MlpModel.initialized(
            _parse_ints(args.widths), "logits", seed=args.seed
        )
        umap = bootstrap_sigma(
            train_ds, template, cfg, replicas=args.replicas, seed=args.seed
        )
    else:  # analytic | sandwich
        if not args.model:
            raise ValueError(f"--model is required for {args.method}")
        model = load_checkpoint(args.model)
        cov = analytic_ml_covariance(
            model, train_ds, assume_true_model=(args.method == "analytic")
        )
        umap = covariance_to_uncertainty(cov)
        print(
            f"pseudo-inverse used: {cov.pseudo_inverse_used}, "
            f"negative variances clipped: {cov.diag_negative_count}, "
            f"mean score norm: {mean_score_norm(model, train_ds):.3e}"
        )
    umap.save(args.out)
    print(
        f"wrote {umap.method} sigma map ({len(umap)} weights, "
        f"median {float(np.median(umap.sigma)):.3e}) to {args.out}"
    )
    return 0


def _cmd_prune(args) -> int:
    model = load_checkpoint(args.model)
    umap = UncertaintyMap.load(args.sigma) if args.sigma else None
    criterion = CriterionConfig(
        kind=args.criterion,
        lambda_star=args.lambda_star,
        lambda_scope=args.scope,
        uncertainty=umap,
    )
    if umap is not None and len(umap) != model.param_count:
        raise AlignmentError(
            f"sigma map covers {len(umap)} weights, model has {model.param_count}"
        )
    partition = prunable_partition(model, include_biases=args.include_biases)
    prior = PruneMask.load(args.prior_mask) if args.prior_mask else None
    from .model import get_flat_params

    sv = score(get_flat_params(model), criterion, partition,
               prior_keep=None if prior is None else prior.keep)
    mask = select_prune_set(sv, partition, args.level, prior_mask=prior)
    apply_mask(model, mask)
    survivors = int(mask.keep.sum())
    print(
        f"pruned to {survivors}/{len(mask)} parameters "
        f"({100.0 * mask.dropped_count / len(mask):.2f}% dropped)"
    )
    save_checkpoint(model, args.out_model)
    print(f"wrote pruned checkpoint to {args.out_model}")
    if args.mask_out:
        mask.save(args.mask_out)
        print(f"wrote mask to {args.mask_out}")
    return 0


def _cmd_experiment(args) -> int:
    with open(args.config) as fh:
        cfg = ExperimentConfig.from_json(fh.read())
    if args.seed is not None:
        cfg.seed = args.seed
    progress = (lambda msg: print(msg, file=sys.stderr)) if args.progress else None
    result = run_experiment(cfg, progress=progress)
    paths = emit_outputs(result, args.outdir)
    for s in summarize(result.rows) if result.rows else []:
        extras = ""
        if s.wins_vs_abs is not None:
            extras = (
                f"  vs abs: {s.wins_vs_abs}W/{s.losses_vs_abs}L/{s.ties_vs_abs}T"
            )
        se = "" if s.se_drop is None else f" +- {s.se_drop:.4f}"
        print(
            f"{s.criterion:>10} @ {s.level:5.1f}%: mean drop "
            f"{s.mean_drop:.4f}{se} (n={s.n}){extras}"
        )
    print(f"wrote outputs to {args.outdir}")
    if result.failures:
        for f in result.failures:
            print(
                f"FAILED cell rep={f.repetition} criterion={f.criterion} "
                f"level={f.level}: {f.error}",
                file=sys.stderr,
            )
        return 1
    return 0


def _cmd_summarize(args) -> int:
    rows = read_results_csv(args.results)
    summary = summarize(rows)
    if args.out:
        write_summary_csv(summary, args.out)
        print(f"wrote summary to {args.out}")
    for s in summary:
        extras = ""
        if s.wins_vs_abs is not None:
            extras = f"  vs abs: {s.wins_vs_abs}W/{s.losses_vs_abs}L/{s.ties_vs_abs}T"
        se = "" if s.se_drop is None else f" +- {s.se_drop:.4f}"
        print(
            f"{s.criterion:>10} @ {s.level:5.1f}%: mean drop "
            f"{s.mean_drop:.4f}{se} (n={s.n}){extras}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="muprune",
        description="Train, estimate per-weight uncertainty, prune, and compare.",
    )
    parser.add_argument("--version", action="version", version=f"muprune {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a dense ReLU classifier")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--widths", help="comma-separated layer widths, e.g. 784,128,64,10")
    p.add_argument("--init-model", help="checkpoint to continue from")
    p.add_argument("--mask", help="prune mask to enforce while training")
    p.add_argument("--trace-window", type=int, default=0,
                   help="record the last N weight snapshots")
    p.add_argument("--sigma-out", help="write the trace sigma map here")
    p.add_argument("--out-model", help="write the trained checkpoint here")
    p.add_argument("--report", help="write the per-epoch CSV report here")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("uncertainty", help="estimate per-weight sigmas")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--method", choices=("pboot", "boot", "analytic", "sandwich"),
                   required=True)
    p.add_argument("--widths")
    p.add_argument("--model", help="checkpoint (analytic/sandwich methods)")
    p.add_argument("--trace-window", type=int, default=200)
    p.add_argument("--replicas", type=int, default=20)
    p.add_argument("--out-model", help="also save the trained model (pboot)")
    p.add_argument("--out", required=True, help="write the sigma map here")
    p.set_defaults(func=_cmd_uncertainty)

    p = sub.add_parser("prune", help="prune a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--criterion", choices=("abs", "mu", "wald"), default="abs")
    p.add_argument("--sigma", help="uncertainty map (mu and wald)")
    p.add_argument("--level", type=float, required=True,
                   help="percent of surviving weights to drop per layer")
    p.add_argument("--lambda-star", type=float, default=1.0)
    p.add_argument("--scope", choices=("per_layer", "whole_model"),
                   default="per_layer")
    p.add_argument("--include-biases", action="store_true")
    p.add_argument("--prior-mask", help="compose on top of this mask")
    p.add_argument("--out-model", required=True)
    p.add_argument("--mask-out")
    p.set_defaults(func=_cmd_prune)

    p = sub.add_parser("experiment", help="run a prune/retrain comparison grid")
    p.add_argument("--config", required=True, help="ExperimentConfig JSON")
    p.add_argument("--outdir", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("summarize", help="aggregate a results.csv")
    p.add_argument("--results", required=True)
    p.add_argument("--out", help="also write summary.csv here")
    p.set_defaults(func=_cmd_summarize)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
