"""Difficulty scoring, pacing functions, and paced batch sampling.

A curriculum is two choices: a scoring function that orders the training set
from easy to hard, and a pacing function lambda(t) mapping the mini-batch
index t (0-based, counted across the whole run) to the fraction of the sorted
set that is available for sampling. Batches draw uniformly from the active
prefix of the sorted order. Vanilla training is the degenerate case: identity
order and lambda == 1, which reduces the sampler to plain per-epoch shuffling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, replace

import numpy as np

from .errors import ConfigError, ShapeError
from .nn.network import Network, per_sample_losses

PACING_KINDS = ("linear", "root", "root_p", "geometric", "fixed_exponential",
                "single_step", "baby_step", "one_pass")

STRATEGY_KINDS = ("vanilla", "curriculum", "anti_curriculum", "random_curriculum")

# Treat lambda*N within this distance of an integer as that integer: float
# noise (0.04*1000 = 40.000000000000006) must not bump the ceiling.
_CEIL_GUARD = 1e-9


@dataclass(frozen=True)
class PacingConfig:
    """One pacing function, fully determined at construction.

    Fields by kind:
        linear / root / root_p / geometric: initial_fraction, full_data_at
            (first batch index with the whole set active); root_p also takes
            root_power.
        fixed_exponential: initial_fraction, growth_factor, batches_per_step.
            lambda(t) = min(initial * growth^floor(t/step), 1).
        single_step: initial_fraction, batches_per_step.
            lambda(t) = initial for t < step, then 1.
        baby_step: bucket_count, batches_per_step. The sorted set splits into
            equal buckets introduced cumulatively, one more every step.
        one_pass: bucket_count, batches_per_step. Like baby_step but each
            bucket replaces the previous one instead of accumulating.
    """

    kind: str
    initial_fraction: float = 0.0
    full_data_at: int = 0
    root_power: float = 2.0
    growth_factor: float = 0.0
    batches_per_step: int = 0
    bucket_count: int = 0

    def __post_init__(self):
        if self.kind not in PACING_KINDS:
            raise ConfigError(f"unknown pacing kind {self.kind!r}")
        if self.kind in ("linear", "root", "root_p", "geometric"):
            if not 0.0 < self.initial_fraction <= 1.0:
                raise ConfigError(f"initial fraction must be in (0, 1], got {self.initial_fraction}")
            if self.full_data_at < 1:
                raise ConfigError(f"full_data_at must be >= 1, got {self.full_data_at}")
            if self.kind == "root_p" and self.root_power < 1.0:
                raise ConfigError(f"root power must be >= 1, got {self.root_power}")
        elif self.kind == "fixed_exponential":
            if not 0.0 < self.initial_fraction <= 1.0:
                raise ConfigError(f"initial fraction must be in (0, 1], got {self.initial_fraction}")
            if self.growth_factor <= 1.0:
                raise ConfigError(f"growth factor must be > 1, got {self.growth_factor}")
            if self.batches_per_step < 1:
                raise ConfigError(f"batches_per_step must be >= 1, got {self.batches_per_step}")
        elif self.kind == "single_step":
            if not 0.0 < self.initial_fraction <= 1.0:
                raise ConfigError(f"initial fraction must be in (0, 1], got {self.initial_fraction}")
            if self.batches_per_step < 1:
                raise ConfigError(f"batches_per_step must be >= 1, got {self.batches_per_step}")
        else:  # baby_step, one_pass
            if self.bucket_count < 1:
                raise ConfigError(f"bucket_count must be >= 1, got {self.bucket_count}")
            if self.batches_per_step < 1:
                raise ConfigError(f"batches_per_step must be >= 1, got {self.batches_per_step}")

    def label(self) -> str:
        """Short name used in result tables, e.g. FEP(300) or SSP(300)."""
        if self.kind == "fixed_exponential":
            return f"FEP({self.batches_per_step})"
        if self.kind == "single_step":
            return f"SSP({self.batches_per_step})"
        if self.kind in ("linear", "root", "geometric"):
            return f"{self.kind}({self.full_data_at})"
        if self.kind == "root_p":
            return f"root-{self.root_power:g}({self.full_data_at})"
        return f"{self.kind}({self.bucket_count}x{self.batches_per_step})"

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "PacingConfig":
        return PacingConfig(**d)


def linear_pacing(initial_fraction: float, full_data_at: int) -> PacingConfig:
    return PacingConfig("linear", initial_fraction=initial_fraction, full_data_at=full_data_at)


def root_pacing(initial_fraction: float, full_data_at: int, power: float = 2.0) -> PacingConfig:
    kind = "root" if power == 2.0 else "root_p"
    return PacingConfig(kind, initial_fraction=initial_fraction, full_data_at=full_data_at,
                        root_power=power)


def geometric_pacing(initial_fraction: float, full_data_at: int) -> PacingConfig:
    return PacingConfig("geometric", initial_fraction=initial_fraction, full_data_at=full_data_at)


def fixed_exponential_pacing(initial_fraction: float = 0.04, growth_factor: float = 1.9,
                             batches_per_step: int = 300) -> PacingConfig:
    return PacingConfig("fixed_exponential", initial_fraction=initial_fraction,
                        growth_factor=growth_factor, batches_per_step=batches_per_step)


def single_step_pacing(initial_fraction: float = 0.3, batches_per_step: int = 300) -> PacingConfig:
    return PacingConfig("single_step", initial_fraction=initial_fraction,
                        batches_per_step=batches_per_step)


def baby_step_pacing(bucket_count: int, batches_per_step: int) -> PacingConfig:
    return PacingConfig("baby_step", bucket_count=bucket_count, batches_per_step=batches_per_step)


def one_pass_pacing(bucket_count: int, batches_per_step: int) -> PacingConfig:
    return PacingConfig("one_pass", bucket_count=bucket_count, batches_per_step=batches_per_step)


def saturation_batch(config: PacingConfig) -> int | None:
    """First batch index at which lambda is exactly 1 (None for one_pass)."""
    if config.kind in ("linear", "root", "root_p", "geometric"):
        return 0 if config.initial_fraction == 1.0 else config.full_data_at
    if config.kind == "fixed_exponential":
        if config.initial_fraction == 1.0:
            return 0
        steps = 0
        frac = config.initial_fraction
        while frac * config.growth_factor ** steps < 1.0:
            steps += 1
        return steps * config.batches_per_step
    if config.kind == "single_step":
        return 0 if config.initial_fraction == 1.0 else config.batches_per_step
    if config.kind == "baby_step":
        return (config.bucket_count - 1) * config.batches_per_step
    return None  # one_pass never exposes the whole set at once


def pacing_eval(config: PacingConfig, t: int) -> float:
    """lambda(t): available fraction of the sorted training set at batch t.

    Monotone non-decreasing in t for every kind except one_pass, always in
    (0, 1]. At or past the saturation batch the value is exactly 1.0 (the
    closed forms are algebraically 1 there but can float-round a ulp short).
    """
    if t < 0:
        raise ValueError(f"batch index must be >= 0, got {t}")
    sat = saturation_batch(config)
    if sat is not None and t >= sat:
        return 1.0
    kind = config.kind
    if kind == "linear":
        lam0, tf = config.initial_fraction, config.full_data_at
        return min(lam0 + (1.0 - lam0) * t / tf, 1.0)
    if kind == "root":
        lam0, tf = config.initial_fraction, config.full_data_at
        return min(math.sqrt(lam0 ** 2 + (1.0 - lam0 ** 2) * t / tf), 1.0)
    if kind == "root_p":
        lam0, tf, p = config.initial_fraction, config.full_data_at, config.root_power
        return min((lam0 ** p + (1.0 - lam0 ** p) * t / tf) ** (1.0 / p), 1.0)
    if kind == "geometric":
        lam0, tf = config.initial_fraction, config.full_data_at
        log0 = math.log2(lam0)
        return min(2.0 ** (log0 - (log0 / tf) * t), 1.0)
    if kind == "fixed_exponential":
        steps = t // config.batches_per_step
        return min(config.initial_fraction * config.growth_factor ** steps, 1.0)
    if kind == "single_step":
        return config.initial_fraction if t < config.batches_per_step else 1.0
    if kind == "baby_step":
        reached = min(t // config.batches_per_step + 1, config.bucket_count)
        return reached / config.bucket_count
    # one_pass: the active bucket's upper edge; the lower edge comes from
    # one_pass_bounds below.
    reached = min(t // config.batches_per_step + 1, config.bucket_count)
    return reached / config.bucket_count


def one_pass_bounds(config: PacingConfig, t: int) -> tuple[float, float]:
    """Fractional (low, high) edges of the single active one_pass bucket."""
    if config.kind != "one_pass":
        raise ValueError("one_pass_bounds applies to one_pass pacing only")
    reached = min(t // config.batches_per_step + 1, config.bucket_count)
    return (reached - 1) / config.bucket_count, reached / config.bucket_count


def _guarded_ceil(value: float) -> int:
    return math.ceil(value - _CEIL_GUARD)


def active_range(config: PacingConfig | None, t: int, n: int,
                 batch_size: int) -> tuple[int, int]:
    """Half-open index range of the sorted order open for sampling at batch t.

    The upper edge is ceil(lambda(t) * n), floored at min(batch_size, n) so a
    batch can always be drawn, and capped at n. one_pass returns the single
    active bucket instead of a prefix. ``config=None`` means no pacing (the
    whole set).
    """
    if n < 1:
        raise ValueError(f"dataset size must be >= 1, got {n}")
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    if config is None:
        return 0, n
    floor = min(batch_size, n)
    if config.kind == "one_pass":
        lo_frac, hi_frac = one_pass_bounds(config, t)
        lo = _guarded_ceil(lo_frac * n)
        hi = max(_guarded_ceil(hi_frac * n), lo + floor)
        hi = min(hi, n)
        lo = min(lo, hi - floor) if hi - lo < floor else lo
        return max(lo, 0), hi
    hi = min(max(_guarded_ceil(pacing_eval(config, t) * n), floor), n)
    return 0, hi


def sample_batch(bounds: tuple[int, int], batch_size: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Uniform batch of positions from [lo, hi), without replacement inside
    the batch when the range is large enough (with replacement otherwise)."""
    lo, hi = bounds
    size = hi - lo
    if size < 1:
        raise ValueError(f"empty sampling range {bounds}")
    if size >= batch_size:
        return lo + rng.permutation(size)[:batch_size]
    return lo + rng.integers(0, size, size=batch_size)


@dataclass(frozen=True)
class DifficultyOrder:
    """Per-sample difficulty scores and the stable easy-to-hard permutation."""

    scores: np.ndarray
    permutation: np.ndarray

    @staticmethod
    def from_scores(scores: np.ndarray) -> "DifficultyOrder":
        scores = np.asarray(scores, dtype=np.float64)
        if scores.ndim != 1:
            raise ShapeError(f"scores must be 1-D, got shape {scores.shape}")
        # stable: equal scores keep dataset order
        return DifficultyOrder(scores, np.argsort(scores, kind="stable"))

    def __len__(self) -> int:
        return len(self.scores)


def score_with_teacher(teacher: Network, inputs: np.ndarray, labels: np.ndarray) -> DifficultyOrder:
    """Order samples by the teacher's per-sample cross-entropy loss (eval mode).

    Low loss = easy. The teacher is used read-only.
    """
    return DifficultyOrder.from_scores(per_sample_losses(teacher, inputs, labels))


@dataclass(frozen=True)
class Strategy:
    """An ordering rule plus (for paced kinds) a pacing function.

    kinds: vanilla (natural order, no pacing), curriculum (easy first),
    anti_curriculum (hard first), random_curriculum (seeded random order,
    same pacing machinery).
    """

    kind: str
    pacing: PacingConfig | None = None
    order_seed: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy kind {self.kind!r}")
        if self.kind == "vanilla" and self.pacing is not None:
            raise ConfigError("vanilla takes no pacing function")
        if self.kind != "vanilla" and self.pacing is None:
            raise ConfigError(f"{self.kind} requires a pacing function")

    def with_seed(self, order_seed: int) -> "Strategy":
        return replace(self, order_seed=order_seed)


def order_for_strategy(strategy: Strategy, difficulty: DifficultyOrder | None,
                       n: int) -> np.ndarray:
    """The permutation a strategy trains over (position -> dataset index)."""
    if strategy.kind == "vanilla":
        return np.arange(n, dtype=np.int64)
    if strategy.kind == "random_curriculum":
        return np.random.default_rng(strategy.order_seed).permutation(n).astype(np.int64)
    if difficulty is None:
        raise ValueError(f"{strategy.kind} needs a difficulty order")
    if len(difficulty) != n:
        raise ShapeError(f"difficulty order covers {len(difficulty)} samples, dataset has {n}")
    if strategy.kind == "curriculum":
        return difficulty.permutation.astype(np.int64)
    return difficulty.permutation[::-1].astype(np.int64)  # anti: exact reverse


def schedule_stream(permutation: np.ndarray, pacing: PacingConfig | None, n: int,
                    batch_size: int, epochs: int, rng: np.random.Generator):
    """Yield epochs * floor(n / batch_size) batches of dataset indices.

    Positions into ``permutation`` are drawn from a shuffled pool of the
    active range, consumed chunk by chunk so an epoch never repeats a sample
    while the range holds still. The pool is rebuilt (reshuffled) whenever the
    range moves or fewer than a full batch remains. With the full range active
    this is exactly per-epoch reshuffling, which makes vanilla and a saturated
    curriculum the same computation.
    """
    if not 1 <= batch_size <= n:
        raise ValueError(f"need 1 <= batch_size <= n, got batch_size={batch_size} n={n}")
    if len(permutation) != n:
        raise ShapeError(f"permutation covers {len(permutation)} samples, dataset has {n}")
    batches_per_epoch = n // batch_size
    pool = None
    cursor = 0
    bounds = None
    for t in range(epochs * batches_per_epoch):
        now = active_range(pacing, t, n, batch_size)
        if now != bounds or pool is None or cursor + batch_size > len(pool):
            lo, hi = now
            pool = lo + rng.permutation(hi - lo)
            cursor = 0
            bounds = now
        chunk = pool[cursor:cursor + batch_size]
        cursor += batch_size
        yield permutation[chunk]


def strategy_stream(strategy: Strategy, difficulty: DifficultyOrder | None, n: int,
                    batch_size: int, epochs: int, rng: np.random.Generator):
    """schedule_stream with the strategy's own ordering applied."""
    order = order_for_strategy(strategy, difficulty, n)
    return schedule_stream(order, strategy.pacing, n, batch_size, epochs, rng)


def default_pacing_grid() -> list[PacingConfig]:
    """The stock grid searched for each paced strategy."""
    return [
        fixed_exponential_pacing(0.04, 1.9, 100),
        fixed_exponential_pacing(0.04, 1.9, 200),
        fixed_exponential_pacing(0.04, 1.9, 300),
        single_step_pacing(0.3, 300),
    ]


def save_pacing_curve(path, config: PacingConfig, batches: int) -> None:
    """Write "t,lambda" lines for t in [0, batches)."""
    with open(path, "w") as fh:
        fh.write("batch,fraction\n")
        for t in range(batches):
            fh.write(f"{t},{pacing_eval(config, t)!r}\n")


def save_scores(path, scores: np.ndarray) -> None:
    """Write "index,score" lines in dataset order."""
    scores = np.asarray(scores, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write("index,score\n")
        for i, s in enumerate(scores):
            # float() first: repr of a numpy scalar is not a plain literal
            fh.write(f"{i},{float(s)!r}\n")


def load_scores(path) -> np.ndarray:
    from .errors import DataError
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "index,score":
            raise DataError(f"{path}: expected 'index,score' header, got {header!r}")
        scores = []
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            idx_str, score_str = line.split(",")
            if int(idx_str) != len(scores):
                raise DataError(f"{path}:{lineno + 2}: indices must be 0,1,2,... "
                                f"got {idx_str}")
            scores.append(float(score_str))
    return np.asarray(scores, dtype=np.float64)
