"""YAML experiment configuration: schema, defaults, validation."""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from ..curriculum import PacingConfig, default_pacing_grid
from ..datasets import SplitSpec
from ..errors import ConfigError
from ..nn.optim import OptimizerConfig

SCHEMA_VERSION = 1

DEFAULT_LEARNING_RATES = (0.1, 0.12, 0.01, 0.001, 0.0001, 0.00001)


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"  # synthetic | cifar10 | cifar100 | text
    n: int = 2000
    classes: int = 4
    shape: tuple[int, ...] = (1, 8, 8)
    noise: float = 1.0
    hard_fraction: float = 0.0
    hard_noise_multiplier: float = 3.0
    label_flip_prob: float = 0.5
    seed: int = 0
    paths: tuple[str, ...] = ()   # cifar batch files, in order
    path: str = ""                # text-format file
    limit: int = 0                # keep only the first N loaded samples (0 = all)

    def __post_init__(self):
        if self.kind not in ("synthetic", "cifar10", "cifar100", "text"):
            raise ConfigError(f"dataset.kind: unknown kind {self.kind!r}")
        if self.kind in ("cifar10", "cifar100") and not self.paths:
            raise ConfigError("dataset.paths: required for cifar datasets")
        if self.kind == "text" and not self.path:
            raise ConfigError("dataset.path: required for text datasets")

    def name(self) -> str:
        if self.kind == "synthetic":
            return f"synthetic(n={self.n})"
        return self.kind


@dataclass(frozen=True)
class NetworkConfig:
    """A small conv net: (conv-relu-maxpool) per channel entry, then the
    flatten/class-dense/softmax tail."""

    conv_channels: tuple[int, ...] = (8, 16)
    epochs: int = 10
    batch_size: int = 32
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    name: str = ""

    def __post_init__(self):
        if not self.conv_channels:
            raise ConfigError("conv_channels must not be empty")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError(f"bad epochs={self.epochs} / batch_size={self.batch_size}")
        if not self.name:
            object.__setattr__(self, "name",
                               "cnn" + "-".join(str(c) for c in self.conv_channels))


@dataclass(frozen=True)
class TeacherConfig:
    name: str = "self"
    network: NetworkConfig | None = None  # None = the backbone scores itself

    @property
    def is_self(self) -> bool:
        return self.network is None


@dataclass(frozen=True)
class BranchConfig:
    location: int = 3
    conv_filters: int = 16
    conv_kernel: int = 3
    pool: int = 2
    dense_units: tuple[int, ...] = (128, 64)
    dropout_rate: float = 0.5


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 50
    batch_size: int = 32
    repetitions: int = 5
    optimizer: OptimizerConfig | None = None  # for single-cell runs; grid selects otherwise
    pacing: PacingConfig | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.repetitions < 1:
            raise ConfigError(f"bad training block: epochs={self.epochs} "
                              f"batch_size={self.batch_size} repetitions={self.repetitions}")


@dataclass(frozen=True)
class GridConfig:
    optimizer_kinds: tuple[str, ...] = ("sgd", "adam")
    learning_rates: tuple[float, ...] = DEFAULT_LEARNING_RATES
    pacing: tuple[PacingConfig, ...] = tuple(default_pacing_grid())
    selection_epochs: int = 0  # 0 = same as training.epochs

    def __post_init__(self):
        for kind in self.optimizer_kinds:
            if kind not in ("sgd", "adam"):
                raise ConfigError(f"grid.optimizer_kinds: unknown kind {kind!r}")
        if not self.learning_rates or not self.optimizer_kinds or not self.pacing:
            raise ConfigError("grid axes must not be empty")
        if self.selection_epochs < 0:
            raise ConfigError(f"grid.selection_epochs must be >= 0, got {self.selection_epochs}")


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 0
    output_dir: str = ""
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    backbone: NetworkConfig = field(default_factory=NetworkConfig)
    branches: tuple[BranchConfig, ...] = (BranchConfig(),)
    teachers: tuple[TeacherConfig, ...] = (TeacherConfig(),)
    strategies: tuple[str, ...] = ("vanilla", "curriculum", "anti_curriculum",
                                   "random_curriculum")
    grid: GridConfig = field(default_factory=GridConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def __post_init__(self):
        from ..curriculum import STRATEGY_KINDS
        for s in self.strategies:
            if s not in STRATEGY_KINDS:
                raise ConfigError(f"strategies: unknown strategy {s!r}")
        if not self.branches:
            raise ConfigError("at least one branch is required")
        locations = [b.location for b in self.branches]
        if len(set(locations)) != len(locations):
            raise ConfigError(f"duplicate branch locations: {locations}")
        # selection picks the best epoch, so at least one epoch must run
        if (self.grid.selection_epochs or self.training.epochs) < 1:
            raise ConfigError("grid selection needs at least one training epoch; set "
                              "training.epochs or grid.selection_epochs to >= 1")


def _take(mapping: dict, context: str, **fields):
    """Pop known keys with defaults; reject unknown ones by name."""
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"{context}: expected a mapping, got {type(mapping).__name__}")
    unknown = set(mapping) - set(fields)
    if unknown:
        raise ConfigError(f"{context}: unknown key(s) {sorted(unknown)}")
    return {k: mapping.get(k, d) for k, d in fields.items()}


def _tuple(value, cast=lambda v: v):
    if value is None:
        return ()
    return tuple(cast(v) for v in value)


def _optimizer(raw, context) -> OptimizerConfig:
    vals = _take(raw, context, kind="adam", learning_rate=1e-3, beta1=0.9, beta2=0.999,
                 epsilon=1e-8, plateau_factor=0.5, plateau_patience=3,
                 plateau_min_delta=1e-4, min_learning_rate=1e-6)
    return OptimizerConfig(**vals)


def _pacing(raw, context) -> PacingConfig:
    vals = _take(raw, context, kind=None, initial_fraction=0.0, full_data_at=0,
                 root_power=2.0, growth_factor=0.0, batches_per_step=0, bucket_count=0)
    if vals["kind"] is None:
        raise ConfigError(f"{context}: pacing entry needs a 'kind'")
    return PacingConfig(**vals)


def _network(raw, context, default_epochs=10) -> NetworkConfig:
    vals = _take(raw, context, conv_channels=(8, 16), epochs=default_epochs,
                 batch_size=32, optimizer=None, name="")
    vals["conv_channels"] = _tuple(vals["conv_channels"], int)
    vals["optimizer"] = (_optimizer(vals["optimizer"], f"{context}.optimizer")
                         if vals["optimizer"] is not None else OptimizerConfig())
    return NetworkConfig(**vals)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level of the config must be a mapping")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
    top = _take(raw, "config", schema_version=SCHEMA_VERSION, master_seed=0, output_dir="",
                dataset=None, split=None, backbone=None, branches=None, teachers=None,
                strategies=None, grid=None, training=None)

    ds = _take(top["dataset"], "dataset", kind="synthetic", n=2000, classes=4,
               shape=(1, 8, 8), noise=1.0, hard_fraction=0.0, hard_noise_multiplier=3.0,
               label_flip_prob=0.5, seed=0, paths=(), path="", limit=0)
    ds["shape"] = _tuple(ds["shape"], int)
    ds["paths"] = _tuple(ds["paths"], str)
    dataset = DatasetConfig(**ds)

    sp = _take(top["split"], "split", train=0.6, validation=0.15, test=0.15,
               search=0.10, seed=0)
    split_spec = SplitSpec(**sp)

    backbone = _network(top["backbone"], "backbone")

    branches = []
    for i, braw in enumerate(top["branches"] or [{}]):
        bv = _take(braw, f"branches[{i}]", location=3, conv_filters=16, conv_kernel=3,
                   pool=2, dense_units=(128, 64), dropout_rate=0.5)
        bv["dense_units"] = _tuple(bv["dense_units"], int)
        branches.append(BranchConfig(**bv))

    teachers = []
    for i, traw in enumerate(top["teachers"] if top["teachers"] is not None else ["self"]):
        if traw == "self":
            teachers.append(TeacherConfig())
            continue
        tv = _take(traw, f"teachers[{i}]", name="", network=None)
        if tv["network"] is None:
            if tv["name"] and tv["name"] != "self":
                raise ConfigError(f"teachers[{i}]: non-self teacher needs a network block")
            teachers.append(TeacherConfig())
        else:
            net = _network(tv["network"], f"teachers[{i}].network")
            teachers.append(TeacherConfig(name=tv["name"] or net.name, network=net))

    strategies = _tuple(top["strategies"], str) if top["strategies"] is not None else (
        "vanilla", "curriculum", "anti_curriculum", "random_curriculum")

    gr = _take(top["grid"], "grid", optimizer_kinds=("sgd", "adam"),
               learning_rates=DEFAULT_LEARNING_RATES, pacing=None, selection_epochs=0)
    gr["optimizer_kinds"] = _tuple(gr["optimizer_kinds"], str)
    gr["learning_rates"] = _tuple(gr["learning_rates"], float)
    gr["pacing"] = (tuple(_pacing(p, f"grid.pacing[{j}]") for j, p in enumerate(gr["pacing"]))
                    if gr["pacing"] is not None else tuple(default_pacing_grid()))
    grid = GridConfig(**gr)

    tr = _take(top["training"], "training", epochs=50, batch_size=32, repetitions=5,
               optimizer=None, pacing=None)
    tr["optimizer"] = (_optimizer(tr["optimizer"], "training.optimizer")
                       if tr["optimizer"] is not None else None)
    tr["pacing"] = (_pacing(tr["pacing"], "training.pacing")
                    if tr["pacing"] is not None else None)
    training = TrainingConfig(**tr)

    return ExperimentConfig(master_seed=int(top["master_seed"]),
                            output_dir=str(top["output_dir"] or ""), dataset=dataset,
                            split=split_spec, backbone=backbone, branches=tuple(branches),
                            teachers=tuple(teachers), strategies=strategies, grid=grid,
                            training=training)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: not valid YAML: {e}") from None
    try:
        return config_from_dict(raw)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None
