"""Multi-exit models: frozen backbone, branch heads, entropy-gated inference.

A branch attaches to the output of backbone layer b (1-based; the "tap") and
is trained on its own, with the backbone read-only. Inference walks the
branches in depth order and takes the first exit whose predictive entropy
falls below the policy threshold, falling through to the backbone's own
output otherwise.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import layers as L
from .nn.losses import batch_cross_entropy
from .nn.network import Network, backward, build_network, forward, freeze
from .nn.optim import OptimizerConfig, PlateauScheduler, apply_gradients

EVAL_CHUNK = 256


@dataclass(frozen=True)
class BranchSpec:
    """Where a branch taps the backbone and the width of its head.

    The head is conv -> maxpool -> flatten -> dense stack with dropout between
    the dense pairs -> class dense -> softmax, so the tap must be image-shaped
    (channels, height, width).
    """

    location: int
    conv_filters: int = 16
    conv_kernel: int = 3
    pool: int = 2
    dense_units: tuple[int, ...] = (128, 64)
    dropout_rate: float = 0.5

    def head_layers(self, class_count: int) -> list[L.LayerSpec]:
        specs = [L.conv2d(self.conv_filters, self.conv_kernel), L.maxpool2d(self.pool),
                 L.flatten()]
        for units in self.dense_units:
            specs.append(L.dense(units))
            specs.append(L.dropout(self.dropout_rate))
        specs.append(L.dense(class_count))
        specs.append(L.softmax())
        return specs


@dataclass
class MultiExitModel:
    backbone: Network
    branches: dict[int, Network] = field(default_factory=dict)
    branch_specs: dict[int, BranchSpec] = field(default_factory=dict)

    @property
    def class_count(self) -> int:
        return self.backbone.output_shape[-1]

    @property
    def locations(self) -> list[int]:
        return sorted(self.branches)


def attach_branches(backbone: Network, specs: list[BranchSpec], seed: int) -> MultiExitModel:
    """Freeze the backbone and give it freshly initialised branch heads.

    Branch parameters derive from (seed, location) only, so a branch's init
    never depends on which other branches exist. Same seed twice gives
    bitwise-identical branches. The backbone is shared by reference; it is
    read-only from here on.
    """
    freeze(backbone)
    depth = len(backbone.layers)
    locations = [s.location for s in specs]
    if len(set(locations)) != len(locations):
        raise ConfigError(f"duplicate branch locations in {locations}")
    model = MultiExitModel(backbone)
    for spec in sorted(specs, key=lambda s: s.location):
        if not 1 <= spec.location <= depth:
            raise ConfigError(f"branch location {spec.location} outside [1, {depth}]")
        tap_shape = backbone.shapes[spec.location]
        if len(tap_shape) != 3:
            raise ShapeError(f"branch at location {spec.location}: tap shape {tap_shape} "
                             "is not (channels, height, width)")
        head = spec.head_layers(model.class_count)
        model.branches[spec.location] = build_network(head, tap_shape, [seed, spec.location])
        model.branch_specs[spec.location] = spec
    return model


def backbone_activations(model: MultiExitModel, inputs: np.ndarray, location: int,
                         chunk: int = EVAL_CHUNK) -> np.ndarray:
    """Eval-mode backbone activations at a tap, computed in fixed-size chunks."""
    net = model.backbone
    if not 1 <= location <= len(net.layers):
        raise ConfigError(f"location {location} outside [1, {len(net.layers)}]")
    inputs = np.asarray(inputs, dtype=np.float64)
    parts = []
    for i in range(0, len(inputs), chunk):
        x = inputs[i:i + chunk]
        for j in range(location):
            x, _ = L.forward(net.layers[j], x, _weights(net, j), "eval", None)
        parts.append(x)
    return np.concatenate(parts, axis=0)


def _weights(net: Network, i: int):
    name = f"layer{i}.w"
    if name in net.params.values:
        return net.params.values[name], net.params.values[f"layer{i}.b"]
    return None


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    val_accuracy: float
    val_loss: float
    learning_rate: float


def train_branch(model: MultiExitModel, location: int, train_inputs: np.ndarray,
                 train_labels: np.ndarray, val_inputs: np.ndarray, val_labels: np.ndarray,
                 batches, optimizer: OptimizerConfig, epochs: int,
                 rng: np.random.Generator | int = 0,
                 cache_activations: bool = True) -> list[EpochMetrics]:
    """Train one branch head against a frozen backbone.

    Args:
        batches: iterator of index arrays into the training set (one per
            mini-batch); must supply epochs * floor(N / batch_size) batches.
        rng: drives the branch's dropout masks.
        cache_activations: precompute the tap activations for the whole
            training set once (the backbone is frozen, so they never change).
            Off recomputes them per batch; results are identical either way.

    Returns per-epoch metrics. The learning rate follows the plateau schedule
    on validation accuracy. Gradients only ever touch this branch's store;
    the backbone and other branches are untouched.
    """
    if location not in model.branches:
        raise ConfigError(f"no branch at location {location}; have {model.locations}")
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    branch = model.branches[location]
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    n = len(train_labels)
    if cache_activations:
        taps = backbone_activations(model, train_inputs, location)
    else:
        taps = None
        train_inputs = np.asarray(train_inputs, dtype=np.float64)
    val_taps = backbone_activations(model, val_inputs, location)
    scheduler = PlateauScheduler(optimizer)
    history: list[EpochMetrics] = []
    if epochs == 0:
        return history
    batches = iter(batches)
    first = np.asarray(next(batches))
    batches = itertools.chain([first], batches)
    batches_per_epoch = n // len(first)
    for epoch in range(epochs):
        lr = scheduler.learning_rate
        loss_sum = 0.0
        for _ in range(batches_per_epoch):
            try:
                idx = np.asarray(next(batches))
            except StopIteration:
                raise ValueError("batch stream exhausted before the epoch budget") from None
            h = taps[idx] if taps is not None else backbone_activations(
                model, train_inputs[idx], location, chunk=len(idx))
            probs, cache = forward(branch, h, mode="train", rng=rng)
            loss, grad = batch_cross_entropy(probs, train_labels[idx])
            param_grads, _ = backward(branch, cache, grad, wrt_logits=True)
            apply_gradients(branch.params, param_grads, optimizer, learning_rate=lr)
            loss_sum += loss
        val_accuracy, val_loss = _evaluate_head(branch, val_taps, val_labels)
        history.append(EpochMetrics(epoch, loss_sum / batches_per_epoch,
                                    val_accuracy, val_loss, lr))
        scheduler.update(val_accuracy)
    return history


def _evaluate_head(branch: Network, taps: np.ndarray, labels) -> tuple[float, float]:
    labels = np.asarray(labels, dtype=np.int64)
    outs = [forward(branch, taps[i:i + EVAL_CHUNK])[0] for i in range(0, len(taps), EVAL_CHUNK)]
    probs = np.concatenate(outs, axis=0)
    loss, _ = batch_cross_entropy(probs, labels)
    return float((probs.argmax(axis=1) == labels).mean()), float(loss)


def exit_probabilities(model: MultiExitModel, inputs: np.ndarray,
                       chunk: int = EVAL_CHUNK) -> dict[int | None, np.ndarray]:
    """Class probabilities at every exit, keyed by location (None = final).

    One backbone pass per chunk; branch heads reuse the cached taps.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    out: dict[int | None, list[np.ndarray]] = {b: [] for b in model.locations}
    out[None] = []
    for i in range(0, len(inputs), chunk):
        final, cache = forward(model.backbone, inputs[i:i + chunk])
        out[None].append(final)
        for b in model.locations:
            out[b].append(forward(model.branches[b], cache.activations[b])[0])
    return {key: np.concatenate(parts, axis=0) for key, parts in out.items()}


def evaluate_exit(model: MultiExitModel, location: int | None, inputs: np.ndarray,
                  labels) -> tuple[float, float]:
    """(accuracy, mean loss) of one exit over a labelled set (None = final)."""
    labels = np.asarray(labels, dtype=np.int64)
    if location is None:
        outs = [forward(model.backbone, np.asarray(inputs[i:i + EVAL_CHUNK], dtype=np.float64))[0]
                for i in range(0, len(inputs), EVAL_CHUNK)]
        probs = np.concatenate(outs, axis=0)
        loss, _ = batch_cross_entropy(probs, labels)
        return float((probs.argmax(axis=1) == labels).mean()), float(loss)
    if location not in model.branches:
        raise ConfigError(f"no branch at location {location}; have {model.locations}")
    taps = backbone_activations(model, inputs, location)
    return _evaluate_head(model.branches[location], taps, labels)


def entropy(probabilities: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) along the last axis, with 0 * ln 0 = 0."""
    p = np.asarray(probabilities, dtype=np.float64)
    terms = np.where(p > 0.0, p * np.log(np.maximum(p, np.finfo(np.float64).tiny)), 0.0)
    return -terms.sum(axis=-1)


@dataclass(frozen=True)
class ExitPolicy:
    """Take the first exit (branches by depth) whose entropy is strictly below
    the threshold; otherwise fall through to the final output."""

    entropy_threshold: float

    def __post_init__(self):
        if math.isnan(self.entropy_threshold) or self.entropy_threshold < 0.0:
            raise ConfigError(f"entropy threshold must be >= 0, got {self.entropy_threshold}")


def predict_with_policy(model: MultiExitModel, inputs: np.ndarray,
                        policy: ExitPolicy) -> tuple[np.ndarray, list[int | None]]:
    """Batched entropy-gated inference.

    Returns (predicted classes, exit per sample). Exits are branch locations;
    None marks the final output.
    """
    probs = exit_probabilities(model, inputs)
    n = len(probs[None])
    chosen_probs = probs[None].copy()
    exits: list[int | None] = [None] * n
    undecided = np.ones(n, dtype=bool)
    for b in model.locations:
        take = undecided & (entropy(probs[b]) < policy.entropy_threshold)
        for i in np.flatnonzero(take):
            exits[i] = b
        chosen_probs[take] = probs[b][take]
        undecided &= ~take
    return chosen_probs.argmax(axis=1), exits


def infer_with_policy(model: MultiExitModel, x: np.ndarray,
                      policy: ExitPolicy) -> tuple[int, int | None]:
    """Single-sample inference; x has the backbone's input shape."""
    x = np.asarray(x, dtype=np.float64)
    if tuple(x.shape) != model.backbone.input_shape:
        raise ShapeError(f"expected input shape {model.backbone.input_shape}, got {x.shape}")
    preds, exits = predict_with_policy(model, x[None], policy)
    return int(preds[0]), exits[0]
