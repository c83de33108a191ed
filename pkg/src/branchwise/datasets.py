"""Dataset container, synthetic generation, CIFAR binary loading, splits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError, ShapeError

CIFAR10_RECORD = 3073   # 1 label byte + 3*1024 channel-major pixels
CIFAR100_RECORD = 3074  # coarse + fine label bytes + pixels


@dataclass(frozen=True)
class Dataset:
    """Immutable labelled set: float64 inputs [N, ...], int64 labels [N]."""

    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    source: str = ""

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if len(inputs) != len(labels):
            raise ShapeError(f"{len(inputs)} inputs vs {len(labels)} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise DataError(f"labels must be in [0, {self.class_count}), "
                            f"found {int(labels.min())}..{int(labels.max())}")
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def subset(self, indices: np.ndarray, source: str | None = None) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(self.inputs[indices].copy(), self.labels[indices].copy(),
                       self.class_count, self.source if source is None else source)


def generate_synthetic(classes: int, shape: tuple[int, ...] | int, n: int,
                       noise: float = 1.0, hard_fraction: float = 0.0,
                       hard_noise_multiplier: float = 3.0, label_flip_prob: float = 0.5,
                       seed: int = 0, return_hard_indices: bool = False):
    """Gaussian class clusters with an optional deliberately hard subset.

    Each class gets a random mean; samples are mean + noise * N(0, 1). A
    ``hard_fraction`` of samples get their noise scaled by
    ``hard_noise_multiplier`` and their label flipped to a random other class
    with probability ``label_flip_prob``. Labels cycle 0..classes-1 so the set
    is exactly balanced (up to the remainder). Deterministic per seed.
    """
    if isinstance(shape, int):
        shape = (shape,)
    shape = tuple(int(d) for d in shape)
    if classes < 2:
        raise ConfigError(f"need at least 2 classes, got {classes}")
    if n < classes:
        raise ConfigError(f"need n >= classes, got n={n} classes={classes}")
    if not 0.0 <= hard_fraction <= 1.0:
        raise ConfigError(f"hard fraction must be in [0, 1], got {hard_fraction}")
    if noise < 0.0:
        raise ConfigError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    dim = int(np.prod(shape))
    means = rng.normal(0.0, 1.0, size=(classes, dim))
    labels = (np.arange(n) % classes).astype(np.int64)
    draws = rng.standard_normal((n, dim))
    n_hard = int(math.floor(hard_fraction * n))
    hard = rng.permutation(n)[:n_hard]
    scale = np.full((n, 1), noise)
    scale[hard] *= hard_noise_multiplier
    inputs = means[labels] + scale * draws
    if n_hard:
        flip = hard[rng.random(n_hard) < label_flip_prob]
        labels[flip] = (labels[flip] + rng.integers(1, classes, size=len(flip))) % classes
    ds = Dataset(inputs.reshape((n,) + shape), labels, classes, source=f"synthetic(seed={seed})")
    if return_hard_indices:
        return ds, np.sort(hard)
    return ds


def load_cifar_binary(paths, variant: str = "cifar10") -> Dataset:
    """Read CIFAR batch files in their raw binary record layout.

    Each record is one label byte (CIFAR-100: coarse then fine; the fine label
    is used) followed by 3072 channel-major pixel bytes, so channel c, row y,
    col x sits at byte label_width + c*1024 + y*32 + x. Pixels scale to
    [0, 1] by /255. Files concatenate in the order given.
    """
    if variant == "cifar10":
        record, label_offset, classes = CIFAR10_RECORD, 0, 10
    elif variant == "cifar100":
        record, label_offset, classes = CIFAR100_RECORD, 1, 100
    else:
        raise ConfigError(f"variant must be 'cifar10' or 'cifar100', got {variant!r}")
    if isinstance(paths, (str, bytes)) or not hasattr(paths, "__iter__"):
        paths = [paths]
    all_inputs = []
    all_labels = []
    for path in paths:
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) == 0 or len(raw) % record != 0:
            offset = len(raw) - len(raw) % record
            raise DataError(f"{path}: truncated at byte {offset} "
                            f"(file is {len(raw)} bytes, record length {record})")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
        labels = rec[:, label_offset].astype(np.int64)
        if labels.max() >= classes:
            bad = int(np.argmax(labels >= classes))
            raise DataError(f"{path}: record {bad} has label {int(labels[bad])} "
                            f">= {classes}")
        pixels = rec[:, label_offset + 1:].reshape(-1, 3, 32, 32)
        all_inputs.append(pixels.astype(np.float64) / 255.0)
        all_labels.append(labels)
    return Dataset(np.concatenate(all_inputs), np.concatenate(all_labels), classes,
                   source=variant)


@dataclass(frozen=True)
class SplitSpec:
    """Four-way split fractions; they must lie in (0, 1) and sum to 1."""

    train: float = 0.6
    validation: float = 0.15
    test: float = 0.15
    search: float = 0.10
    seed: int = 0

    def __post_init__(self):
        parts = (self.train, self.validation, self.test, self.search)
        if any(not 0.0 < f < 1.0 for f in parts):
            raise ConfigError(f"split fractions must be in (0, 1), got {parts}")
        if abs(sum(parts) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(parts)!r}")


class Splits(NamedTuple):
    train: Dataset
    validation: Dataset
    test: Dataset
    search: Dataset


def split(dataset: Dataset, spec: SplitSpec) -> Splits:
    """Seeded shuffle, then contiguous partition.

    validation/test/search take floor(fraction * N) samples each; the
    remainder goes to train. Deterministic per seed; the four parts are
    disjoint and cover the dataset.
    """
    n = len(dataset)
    order = np.random.default_rng(spec.seed).permutation(n)
    n_val = int(spec.validation * n)
    n_test = int(spec.test * n)
    n_search = int(spec.search * n)
    n_train = n - n_val - n_test - n_search
    if min(n_train, n_val, n_test, n_search) < 1:
        raise ConfigError(f"split of {n} samples leaves an empty part "
                          f"(train={n_train} val={n_val} test={n_test} search={n_search})")
    edges = np.cumsum([n_train, n_val, n_test])
    return Splits(
        dataset.subset(order[:edges[0]], source=f"{dataset.source}/train"),
        dataset.subset(order[edges[0]:edges[1]], source=f"{dataset.source}/validation"),
        dataset.subset(order[edges[1]:edges[2]], source=f"{dataset.source}/test"),
        dataset.subset(order[edges[2]:], source=f"{dataset.source}/search"),
    )


def save_text(dataset: Dataset, path) -> None:
    """Plain-text round-trippable dump.

    Header line: N,classes,dim1,dim2,... Each following line is one sample's
    features (row-major, %.17g so float64 round-trips exactly) then its label,
    comma separated.
    """
    dims = ",".join(str(d) for d in dataset.sample_shape)
    with open(path, "w") as fh:
        fh.write(f"{len(dataset)},{dataset.class_count},{dims}\n")
        flat = dataset.inputs.reshape(len(dataset), -1)
        for row, label in zip(flat, dataset.labels):
            fh.write(",".join(f"{v:.17g}" for v in row))
            fh.write(f",{int(label)}\n")


def load_text(path) -> Dataset:
    with open(path) as fh:
        header = fh.readline().strip()
        try:
            fields = [int(v) for v in header.split(",")]
            n, classes, shape = fields[0], fields[1], tuple(fields[2:])
        except (ValueError, IndexError):
            raise DataError(f"{path}: bad header {header!r}") from None
        if not shape:
            raise DataError(f"{path}: header lists no sample dimensions")
        dim = int(np.prod(shape))
        inputs = np.empty((n, dim))
        labels = np.empty(n, dtype=np.int64)
        for i in range(n):
            line = fh.readline()
            if not line:
                raise DataError(f"{path}: expected {n} samples, file ends at {i}")
            parts = line.strip().split(",")
            if len(parts) != dim + 1:
                raise DataError(f"{path}: line {i + 2} has {len(parts)} fields, "
                                f"expected {dim + 1}")
            inputs[i] = [float(v) for v in parts[:dim]]
            labels[i] = int(parts[dim])
    return Dataset(inputs.reshape((n,) + shape), labels, classes, source=str(path))
