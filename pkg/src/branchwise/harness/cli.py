"""Command-line entry point.

Subcommands: score (difficulty file for a config's train split), train (one
branch/strategy cell), grid (the full protocol), eval (per-exit accuracies of
a checkpoint), pacing-dump (lambda curve), infer (entropy-gated predictions).
Output locations fall back to the BRANCHWISE_OUTPUT_DIR environment variable.
Exits 0 on success; on failure prints one machine-readable error line to
stderr and exits 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from .. import curriculum as cur
from ..checkpoint import load_checkpoint, save_checkpoint
from ..datasets import load_text, split
from ..errors import BranchwiseError, ConfigError
from ..multiexit import (ExitPolicy, MultiExitModel, attach_branches, evaluate_exit,
                         infer_with_policy, train_branch)
from ..nn.optim import OptimizerConfig
from .config import ExperimentConfig, load_config
from .protocol import (_branch_spec, load_dataset, prepare_backbone, prepare_teachers,
                       run_experiment)
from .seeding import derive_seed

log = logging.getLogger("branchwise")


def _output_dir(args) -> str:
    out = getattr(args, "output", None) or os.environ.get("BRANCHWISE_OUTPUT_DIR")
    if not out:
        raise ConfigError("no output location: pass --output or set BRANCHWISE_OUTPUT_DIR")
    return out


def _prepared(config: ExperimentConfig):
    data = load_dataset(config.dataset)
    splits = split(data, config.split)
    warnings: list[str] = []
    backbone, _ = prepare_backbone(config, splits, warnings)
    for w in warnings:
        log.warning("%s", w)
    return splits, backbone


def cmd_score(args) -> int:
    config = load_config(args.config)
    out = _output_dir(args)
    if args.checkpoint:
        obj = load_checkpoint(args.checkpoint)
        teacher = obj.backbone if isinstance(obj, MultiExitModel) else obj
        data = load_dataset(config.dataset)
        splits = split(data, config.split)
    else:
        splits, teacher = _prepared(config)
    order = cur.score_with_teacher(teacher, splits.train.inputs, splits.train.labels)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "scores.csv")
    cur.save_scores(path, order.scores)
    print(f"wrote {len(order)} train-split scores to {path}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    out = _output_dir(args)
    locations = [b.location for b in config.branches]
    if args.branch not in locations:
        raise ConfigError(f"--branch {args.branch} not in configured locations {locations}")
    branch = config.branches[locations.index(args.branch)]
    if args.strategy not in cur.STRATEGY_KINDS:
        raise ConfigError(f"--strategy must be one of {cur.STRATEGY_KINDS}")

    splits, backbone = _prepared(config)
    difficulty = None
    if args.strategy in ("curriculum", "anti_curriculum"):
        if args.scores:
            scores = cur.load_scores(args.scores)
            if len(scores) != len(splits.train):
                raise ConfigError(f"{args.scores} holds {len(scores)} scores, train split "
                                  f"has {len(splits.train)}")
            difficulty = cur.DifficultyOrder.from_scores(scores)
        else:
            difficulty = prepare_teachers(config, splits, backbone)[config.teachers[0].name]

    optimizer = config.training.optimizer or OptimizerConfig()
    pacing = None
    if args.strategy != "vanilla":
        pacing = config.training.pacing or config.grid.pacing[args.pacing_index]
    strategy = cur.Strategy(args.strategy, pacing,
                            order_seed=derive_seed(config.master_seed, "rc-order",
                                                   branch.location, 0))
    model = attach_branches(backbone, [_branch_spec(branch)],
                            seed=derive_seed(config.master_seed, "cell-init",
                                             branch.location, 0))
    stream = cur.strategy_stream(strategy, difficulty, len(splits.train),
                                 config.training.batch_size, config.training.epochs,
                                 np.random.default_rng(
                                     derive_seed(config.master_seed, "cell-train",
                                                 branch.location, 0, args.strategy)))
    history = train_branch(model, branch.location, splits.train.inputs, splits.train.labels,
                           splits.validation.inputs, splits.validation.labels, stream,
                           optimizer, config.training.epochs,
                           rng=np.random.default_rng(
                               derive_seed(config.master_seed, "cell-dropout",
                                           branch.location, 0, args.strategy)))
    accuracy, loss = evaluate_exit(model, branch.location, splits.test.inputs,
                                   splits.test.labels)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "metrics.csv"), "w") as fh:
        fh.write("epoch,train_loss,val_accuracy,val_loss,learning_rate\n")
        for h in history:
            fh.write(f"{h.epoch},{h.train_loss!r},{h.val_accuracy!r},{h.val_loss!r},"
                     f"{h.learning_rate!r}\n")
    save_checkpoint(os.path.join(out, "model.bwck"), model)
    print(f"branch {branch.location} {args.strategy}: test accuracy {accuracy:.4f}, "
          f"test loss {loss:.4f}")
    return 0


def cmd_grid(args) -> int:
    config = load_config(args.config)
    out = _output_dir(args)
    result = run_experiment(config, output_dir=out)
    for line in open(os.path.join(out, "results.txt")):
        print(line, end="")
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    config = load_config(args.config)
    model = load_checkpoint(args.checkpoint)
    if not isinstance(model, MultiExitModel):
        model = MultiExitModel(model)
    data = load_dataset(config.dataset)
    part = getattr(split(data, config.split), args.split)
    print("exit,accuracy,loss")
    for location in model.locations:
        accuracy, loss = evaluate_exit(model, location, part.inputs, part.labels)
        print(f"{location},{accuracy!r},{loss!r}")
    accuracy, loss = evaluate_exit(model, None, part.inputs, part.labels)
    print(f"final,{accuracy!r},{loss!r}")
    return 0


def cmd_pacing_dump(args) -> int:
    if args.config:
        config = load_config(args.config)
        pacing = config.grid.pacing[args.grid_index]
    else:
        if not args.kind:
            raise ConfigError("pass --config or --kind")
        pacing = cur.PacingConfig(
            kind=args.kind, initial_fraction=args.initial_fraction,
            full_data_at=args.full_data_at, root_power=args.root_power,
            growth_factor=args.growth_factor, batches_per_step=args.batches_per_step,
            bucket_count=args.bucket_count)
    out = _output_dir(args)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"pacing_{pacing.label()}.csv")
    cur.save_pacing_curve(path, pacing, args.batches)
    print(f"wrote {args.batches} batches of {pacing.label()} to {path}")
    return 0


def cmd_infer(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if not isinstance(model, MultiExitModel):
        raise ConfigError(f"{args.checkpoint} holds a plain network; infer needs branches")
    data = load_text(args.input)
    policy = ExitPolicy(args.threshold)
    print("index,class,exit")
    for i in range(len(data)):
        pred, exit_at = infer_with_policy(model, data.inputs[i], policy)
        print(f"{i},{pred},{'final' if exit_at is None else exit_at}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="branchwise",
        description="Train and evaluate early-exit branches on frozen backbones.")
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="write the train split's difficulty scores")
    p.add_argument("--config", required=True)
    p.add_argument("--output", help="directory (default: $BRANCHWISE_OUTPUT_DIR)")
    p.add_argument("--checkpoint", help="score with this checkpoint instead of training "
                                        "the configured teacher")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="train one branch with one strategy")
    p.add_argument("--config", required=True)
    p.add_argument("--branch", type=int, required=True, help="branch location")
    p.add_argument("--strategy", required=True)
    p.add_argument("--scores", help="difficulty file from 'score' (else the teacher runs)")
    p.add_argument("--pacing-index", type=int, default=0,
                   help="grid.pacing entry when training.pacing is unset")
    p.add_argument("--output")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="run the full selection + repetition protocol")
    p.add_argument("--config", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("eval", help="per-exit accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True, help="provides the dataset and split")
    p.add_argument("--split", default="test",
                   choices=("train", "validation", "test", "search"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pacing-dump", help="write a pacing curve as batch,fraction")
    p.add_argument("--config", help="take the pacing from this config's grid")
    p.add_argument("--grid-index", type=int, default=0)
    p.add_argument("--kind", help="build the pacing from flags instead")
    p.add_argument("--initial-fraction", type=float, default=0.0)
    p.add_argument("--full-data-at", type=int, default=0)
    p.add_argument("--root-power", type=float, default=2.0)
    p.add_argument("--growth-factor", type=float, default=0.0)
    p.add_argument("--batches-per-step", type=int, default=0)
    p.add_argument("--bucket-count", type=int, default=0)
    p.add_argument("--batches", type=int, required=True, help="how many batches to dump")
    p.add_argument("--output")
    p.set_defaults(func=cmd_pacing_dump)

    p = sub.add_parser("infer", help="entropy-gated predictions for a text-format dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="text-format dataset file")
    p.add_argument("--threshold", type=float, required=True,
                   help="entropy threshold in nats (inf = always exit first)")
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr,
                        level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if math.isnan(getattr(args, "threshold", 0.0)):
        print('error: {"type": "ConfigError", "message": "threshold must not be NaN"}',
              file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (BranchwiseError, OSError) as e:
        print(f"error: {json.dumps({'type': type(e).__name__, 'message': str(e)})}",
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
