"""Experiment protocol: backbone prep, grid selection, repeated cells, output.

The flow per branch: pick the optimizer/learning-rate on vanilla training
(selection metric is the best accuracy on the held-out search split), pick
(teacher, pacing) per paced strategy the same way, then run every strategy
for the configured number of repetitions from shared branch initialisations
and report test accuracies. The backbone is trained once, frozen, and shared
by every cell; every seed derives from the master seed and the component
path, so a full run is reproducible bit for bit.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .. import curriculum as cur
from ..checkpoint import save_checkpoint
from ..datasets import (Dataset, Splits, generate_synthetic, load_cifar_binary, load_text,
                        split)
from ..errors import ConfigError
from ..multiexit import BranchSpec, MultiExitModel, attach_branches, evaluate_exit, train_branch
from ..nn import layers as L
from ..nn.losses import batch_cross_entropy
from ..nn.network import Network, backward, build_network, evaluate, forward
from ..nn.optim import OptimizerConfig, PlateauScheduler, apply_gradients
from .config import (BranchConfig, DatasetConfig, ExperimentConfig, NetworkConfig,
                     TeacherConfig)
from .seeding import derive_seed

log = logging.getLogger("branchwise")

STRATEGY_COLUMNS = {"vanilla": "vanilla", "curriculum": "curriculum",
                    "anti_curriculum": "anti", "random_curriculum": "random"}


def load_dataset(config: DatasetConfig) -> Dataset:
    if config.kind == "synthetic":
        data = generate_synthetic(config.classes, config.shape, config.n,
                                  noise=config.noise, hard_fraction=config.hard_fraction,
                                  hard_noise_multiplier=config.hard_noise_multiplier,
                                  label_flip_prob=config.label_flip_prob, seed=config.seed)
    elif config.kind in ("cifar10", "cifar100"):
        data = load_cifar_binary(list(config.paths), variant=config.kind)
    else:
        data = load_text(config.path)
    if config.limit and config.limit < len(data):
        data = data.subset(np.arange(config.limit), source=f"{data.source}[:{config.limit}]")
    return data


def build_conv_net(config: NetworkConfig, input_shape: tuple[int, ...], class_count: int,
                   seed) -> Network:
    specs: list[L.LayerSpec] = []
    for channels in config.conv_channels:
        specs += [L.conv2d(channels), L.relu(), L.maxpool2d(2)]
    specs += [L.flatten(), L.dense(class_count), L.softmax()]
    return build_network(specs, input_shape, seed)


def train_network(net: Network, train_inputs, train_labels, val_inputs, val_labels,
                  optimizer: OptimizerConfig, epochs: int, batch_size: int,
                  rng: np.random.Generator) -> list[tuple[float, float, float]]:
    """Vanilla-shuffle training of a full network; returns
    (train_loss, val_accuracy, learning_rate) per epoch."""
    train_labels = np.asarray(train_labels, dtype=np.int64)
    val_labels = np.asarray(val_labels, dtype=np.int64)
    n = len(train_labels)
    batch_size = min(batch_size, n)
    scheduler = PlateauScheduler(optimizer)
    stream = cur.schedule_stream(np.arange(n, dtype=np.int64), None, n, batch_size,
                                 epochs, rng)
    batches_per_epoch = n // batch_size
    history = []
    for _ in range(epochs):
        loss_sum = 0.0
        for _ in range(batches_per_epoch):
            idx = next(stream)
            probs, cache = forward(net, train_inputs[idx], mode="train", rng=rng)
            loss, grad = batch_cross_entropy(probs, train_labels[idx])
            grads, _ = backward(net, cache, grad, wrt_logits=True)
            apply_gradients(net.params, grads, optimizer,
                            learning_rate=scheduler.learning_rate)
            loss_sum += loss
        accuracy, _ = evaluate(net, val_inputs, val_labels)
        history.append((loss_sum / batches_per_epoch, accuracy, scheduler.learning_rate))
        scheduler.update(accuracy)
    return history


def prepare_backbone(config: ExperimentConfig, splits: Splits,
                     warnings: list[str]) -> tuple[Network, float]:
    """Train, freeze, and measure the shared backbone."""
    bb = config.backbone
    net = build_conv_net(bb, splits.train.sample_shape, splits.train.class_count,
                         derive_seed(config.master_seed, "backbone-init"))
    rng = np.random.default_rng(derive_seed(config.master_seed, "backbone-train"))
    train_network(net, splits.train.inputs, splits.train.labels,
                  splits.validation.inputs, splits.validation.labels,
                  bb.optimizer, bb.epochs, bb.batch_size, rng)
    val_accuracy, _ = evaluate(net, splits.validation.inputs, splits.validation.labels)
    chance = 1.0 / splits.train.class_count
    if val_accuracy <= chance:
        warnings.append(f"backbone validation accuracy {val_accuracy:.4f} is at or "
                        f"below chance ({chance:.4f}); continuing anyway")
    net.params.freeze()
    test_accuracy, _ = evaluate(net, splits.test.inputs, splits.test.labels)
    log.info("backbone %s: validation %.4f, test %.4f", bb.name, val_accuracy, test_accuracy)
    return net, test_accuracy


def prepare_teachers(config: ExperimentConfig, splits: Splits,
                     backbone: Network) -> dict[str, cur.DifficultyOrder]:
    """Difficulty order of the train split under each configured teacher."""
    orders: dict[str, cur.DifficultyOrder] = {}
    for teacher in config.teachers:
        if teacher.is_self:
            net = backbone
        else:
            net = build_conv_net(teacher.network, splits.train.sample_shape,
                                 splits.train.class_count,
                                 derive_seed(config.master_seed, "teacher-init", teacher.name))
            rng = np.random.default_rng(
                derive_seed(config.master_seed, "teacher-train", teacher.name))
            train_network(net, splits.train.inputs, splits.train.labels,
                          splits.validation.inputs, splits.validation.labels,
                          teacher.network.optimizer, teacher.network.epochs,
                          teacher.network.batch_size, rng)
        orders[teacher.name] = cur.score_with_teacher(net, splits.train.inputs,
                                                      splits.train.labels)
        log.info("teacher %s: scored %d training samples", teacher.name,
                 len(orders[teacher.name]))
    return orders


def _branch_spec(branch: BranchConfig) -> BranchSpec:
    return BranchSpec(location=branch.location, conv_filters=branch.conv_filters,
                      conv_kernel=branch.conv_kernel, pool=branch.pool,
                      dense_units=branch.dense_units, dropout_rate=branch.dropout_rate)


def _train_candidate(config: ExperimentConfig, backbone: Network, branch: BranchConfig,
                     splits: Splits, strategy: cur.Strategy,
                     difficulty: cur.DifficultyOrder | None, optimizer: OptimizerConfig,
                     epochs: int, init_seed: int, stream_seed: int,
                     dropout_seed: int) -> float:
    """One selection training; returns the best search-split accuracy."""
    model = attach_branches(backbone, [_branch_spec(branch)], seed=init_seed)
    n = len(splits.train)
    stream = cur.strategy_stream(strategy, difficulty, n, config.training.batch_size,
                                 epochs, np.random.default_rng(stream_seed))
    history = train_branch(model, branch.location, splits.train.inputs, splits.train.labels,
                           splits.search.inputs, splits.search.labels, stream, optimizer,
                           epochs, rng=np.random.default_rng(dropout_seed))
    return max(h.val_accuracy for h in history)


@dataclass(frozen=True)
class OptimizerSelection:
    kind: str
    learning_rate: float
    search_accuracy: float


def pick_optimizer(candidates) -> OptimizerSelection:
    """Highest search accuracy wins; ties break to the lower learning rate,
    then SGD before Adam."""
    kind_rank = {"sgd": 0, "adam": 1}
    return min(candidates, key=lambda c: (-c.search_accuracy, c.learning_rate,
                                          kind_rank[c.kind]))


def select_vanilla_optimizer(config: ExperimentConfig, backbone: Network,
                             branch: BranchConfig, splits: Splits) -> OptimizerSelection:
    """Grid-search optimizer kind and learning rate on vanilla training.

    Selection metric: best search-split accuracy over the run. Ties break to
    the lower learning rate, then SGD before Adam.
    """
    epochs = config.grid.selection_epochs or config.training.epochs
    vanilla = cur.Strategy("vanilla")
    init_seed = derive_seed(config.master_seed, "opt-init", branch.location)
    candidates = []
    for kind, lr in product(config.grid.optimizer_kinds, config.grid.learning_rates):
        optimizer = OptimizerConfig(kind=kind, learning_rate=lr)
        accuracy = _train_candidate(
            config, backbone, branch, splits, vanilla, None, optimizer, epochs,
            init_seed,
            derive_seed(config.master_seed, "opt-train", branch.location),
            derive_seed(config.master_seed, "opt-dropout", branch.location))
        candidates.append(OptimizerSelection(kind, lr, accuracy))
        log.info("branch %d optimizer grid: %s lr=%g -> search %.4f",
                 branch.location, kind, lr, accuracy)
    return pick_optimizer(candidates)


@dataclass(frozen=True)
class StrategySelection:
    teacher: str
    pacing: cur.PacingConfig | None
    search_accuracy: float


def grid_search_pacing(config: ExperimentConfig, backbone: Network, branch: BranchConfig,
                       splits: Splits, difficulty: dict[str, cur.DifficultyOrder],
                       optimizer: OptimizerConfig) -> dict[str, StrategySelection]:
    """Best (teacher, pacing) per paced strategy, by search-split accuracy.

    Random curriculum ignores the teacher axis (its order is seeded noise);
    its teacher is recorded as "-". Ties keep the earlier grid entry.
    """
    epochs = config.grid.selection_epochs or config.training.epochs
    init_seed = derive_seed(config.master_seed, "pace-init", branch.location)
    selections: dict[str, StrategySelection] = {}
    for kind in config.strategies:
        if kind == "vanilla":
            continue
        teachers = ["-"] if kind == "random_curriculum" else [t.name for t in config.teachers]
        best: StrategySelection | None = None
        for teacher_name, pacing in product(teachers, config.grid.pacing):
            strategy = cur.Strategy(kind, pacing,
                                    order_seed=derive_seed(config.master_seed, "rc-order",
                                                           branch.location))
            order = difficulty.get(teacher_name)
            accuracy = _train_candidate(
                config, backbone, branch, splits, strategy, order, optimizer, epochs,
                init_seed,
                derive_seed(config.master_seed, "pace-train", branch.location, kind),
                derive_seed(config.master_seed, "pace-dropout", branch.location, kind))
            log.info("branch %d %s grid: teacher=%s pacing=%s -> search %.4f",
                     branch.location, kind, teacher_name, pacing.label(), accuracy)
            if best is None or accuracy > best.search_accuracy:
                best = StrategySelection(teacher_name, pacing, accuracy)
        selections[kind] = best
    return selections


@dataclass(frozen=True)
class CellResult:
    strategy: str
    accuracies: tuple[float, ...]  # test accuracy per repetition

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        if len(self.accuracies) < 2:
            return 0.0
        return float(np.std(self.accuracies, ddof=1))


def run_cell(config: ExperimentConfig, backbone: Network, branch: BranchConfig,
             splits: Splits, strategy_kind: str,
             difficulty: cur.DifficultyOrder | None, optimizer: OptimizerConfig,
             pacing: cur.PacingConfig | None) -> tuple[CellResult, MultiExitModel]:
    """Train one (branch, strategy) cell for every repetition.

    Repetition i of every strategy starts from the same derived branch
    initialisation (the seed path excludes the strategy), isolating the
    training strategy as the only difference. Returns the result and the last
    repetition's model.
    """
    accuracies = []
    model = None
    for rep in range(config.training.repetitions):
        init_seed = derive_seed(config.master_seed, "cell-init", branch.location, rep)
        model = attach_branches(backbone, [_branch_spec(branch)], seed=init_seed)
        strategy = cur.Strategy(
            strategy_kind,
            None if strategy_kind == "vanilla" else pacing,
            order_seed=derive_seed(config.master_seed, "rc-order", branch.location, rep))
        stream = cur.strategy_stream(
            strategy, difficulty, len(splits.train), config.training.batch_size,
            config.training.epochs,
            np.random.default_rng(derive_seed(config.master_seed, "cell-train",
                                              branch.location, rep, strategy_kind)))
        train_branch(model, branch.location, splits.train.inputs, splits.train.labels,
                     splits.validation.inputs, splits.validation.labels, stream, optimizer,
                     config.training.epochs,
                     rng=np.random.default_rng(derive_seed(config.master_seed, "cell-dropout",
                                                           branch.location, rep,
                                                           strategy_kind)))
        accuracy, _ = evaluate_exit(model, branch.location, splits.test.inputs,
                                    splits.test.labels)
        accuracies.append(accuracy)
        log.info("branch %d %s rep %d: test %.4f", branch.location, strategy_kind, rep,
                 accuracy)
    return CellResult(strategy_kind, tuple(accuracies)), model


@dataclass
class BranchResult:
    location: int
    optimizer: OptimizerSelection
    selections: dict[str, StrategySelection]
    cells: dict[str, CellResult]


@dataclass
class ExperimentResult:
    dataset: str
    backbone: str
    backbone_test_accuracy: float
    branches: list[BranchResult] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def run_experiment(config: ExperimentConfig,
                   output_dir: str | None = None) -> ExperimentResult:
    """The full protocol; writes result files and checkpoints when
    ``output_dir`` (or config.output_dir) is set."""
    out = output_dir or config.output_dir or None
    warnings: list[str] = []
    data = load_dataset(config.dataset)
    splits = split(data, config.split)
    log.info("dataset %s: %d samples -> train %d / val %d / test %d / search %d",
             data.source, len(data), len(splits.train), len(splits.validation),
             len(splits.test), len(splits.search))
    backbone, backbone_test = prepare_backbone(config, splits, warnings)
    frozen_bytes = backbone.params.to_bytes()
    difficulty = prepare_teachers(config, splits, backbone)

    result = ExperimentResult(config.dataset.name(), config.backbone.name, backbone_test,
                              warnings=warnings)
    # one multi-branch model per strategy, assembled from each branch's last repetition
    final_models: dict[str, MultiExitModel] = {s: MultiExitModel(backbone)
                                               for s in config.strategies}
    for branch in config.branches:
        opt_sel = select_vanilla_optimizer(config, backbone, branch, splits)
        optimizer = OptimizerConfig(kind=opt_sel.kind, learning_rate=opt_sel.learning_rate)
        log.info("branch %d: selected %s lr=%g (search %.4f)", branch.location,
                 opt_sel.kind, opt_sel.learning_rate, opt_sel.search_accuracy)
        selections = grid_search_pacing(config, backbone, branch, splits, difficulty,
                                        optimizer)
        cells: dict[str, CellResult] = {}
        for kind in config.strategies:
            sel = selections.get(kind)
            order = difficulty.get(sel.teacher) if sel else None
            cell, model = run_cell(config, backbone, branch, splits, kind, order,
                                   optimizer, sel.pacing if sel else None)
            cells[kind] = cell
            final_models[kind].branches[branch.location] = model.branches[branch.location]
            final_models[kind].branch_specs[branch.location] = \
                model.branch_specs[branch.location]
        result.branches.append(BranchResult(branch.location, opt_sel, selections, cells))

    if backbone.params.to_bytes() != frozen_bytes:
        raise RuntimeError("backbone parameters changed during the experiment")
    if out:
        emit_results(result, out, config)
        save_checkpoint(os.path.join(out, "backbone.bwck"), backbone)
        for kind, model in final_models.items():
            save_checkpoint(os.path.join(out, f"model_{kind}.bwck"), model)
    return result


def _percent(mean: float, std: float) -> str:
    return f"{100.0 * mean:.2f}%±{100.0 * std:.2f}"


def format_table(result: ExperimentResult, strategies: tuple[str, ...]) -> str:
    """Aligned text table, one row per branch, accuracy as percent±std."""
    headers = (["backbone", "dataset", "branch"]
               + [STRATEGY_COLUMNS[s] for s in strategies]
               + ["optimizer", "lr", "teacher", "pacing"])
    rows = []
    for br in result.branches:
        sel = br.selections.get("curriculum")
        rows.append([result.backbone, result.dataset, str(br.location)]
                    + [_percent(br.cells[s].mean, br.cells[s].std) if s in br.cells else "-"
                       for s in strategies]
                    + [br.optimizer.kind, f"{br.optimizer.learning_rate:g}",
                       sel.teacher if sel else "-",
                       sel.pacing.label() if sel else "-"])
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    for row in rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def emit_results(result: ExperimentResult, output_dir: str,
                 config: ExperimentConfig) -> None:
    """Write results.csv, results.txt, accuracies_raw.csv, selections.json.

    Deterministic byte-for-byte for a fixed config and master seed: floats are
    written with repr, rows follow config order, and nothing time-dependent is
    recorded.
    """
    os.makedirs(output_dir, exist_ok=True)
    strategies = config.strategies

    csv_lines = [",".join(["backbone", "dataset", "branch"]
                          + [f"{STRATEGY_COLUMNS[s]}_{m}" for s in strategies
                             for m in ("mean", "std")]
                          + ["optimizer", "learning_rate", "teacher", "pacing"])]
    for br in result.branches:
        sel = br.selections.get("curriculum")
        cells = []
        for s in strategies:
            cells += [repr(br.cells[s].mean), repr(br.cells[s].std)]
        csv_lines.append(",".join([result.backbone, result.dataset, str(br.location)]
                                  + cells
                                  + [br.optimizer.kind, repr(br.optimizer.learning_rate),
                                     sel.teacher if sel else "-",
                                     sel.pacing.label() if sel else "-"]))
    _write(output_dir, "results.csv", "\n".join(csv_lines) + "\n")

    _write(output_dir, "results.txt", format_table(result, strategies))

    raw_lines = ["branch,strategy,repetition,accuracy"]
    for br in result.branches:
        for s in strategies:
            for rep, acc in enumerate(br.cells[s].accuracies):
                raw_lines.append(f"{br.location},{s},{rep},{acc!r}")
    _write(output_dir, "accuracies_raw.csv", "\n".join(raw_lines) + "\n")

    selections = {
        "dataset": result.dataset,
        "backbone": result.backbone,
        "backbone_test_accuracy": result.backbone_test_accuracy,
        "warnings": list(result.warnings),
        "branches": [{
            "location": br.location,
            "optimizer": {"kind": br.optimizer.kind,
                          "learning_rate": br.optimizer.learning_rate,
                          "search_accuracy": br.optimizer.search_accuracy},
            "strategies": {s: {
                "teacher": sel.teacher,
                "pacing": sel.pacing.label(),
                "pacing_config": sel.pacing.to_dict(),
                "search_accuracy": sel.search_accuracy,
            } for s, sel in sorted(br.selections.items())},
        } for br in result.branches],
    }
    _write(output_dir, "selections.json",
           json.dumps(selections, sort_keys=True, indent=2) + "\n")


def _write(output_dir: str, name: str, content: str) -> None:
    with open(os.path.join(output_dir, name), "w") as fh:
        fh.write(content)
