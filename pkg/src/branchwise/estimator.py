"""Scikit-learn style estimator wrapping the multi-exit training pipeline."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import curriculum as cur
from .errors import ConfigError
from .multiexit import (BranchSpec, ExitPolicy, attach_branches, predict_with_policy,
                        exit_probabilities, train_branch)
from .nn import layers as L
from .nn.network import build_network, evaluate
from .nn.optim import OptimizerConfig
from .validation import check_inputs, check_labels


def conv_backbone(input_shape: tuple[int, ...], class_count: int,
                  conv_channels: tuple[int, ...] = (8, 16), seed: int = 0):
    """Small conv net: (conv-relu-maxpool)* then flatten, class dense, softmax."""
    specs: list[L.LayerSpec] = []
    for channels in conv_channels:
        specs += [L.conv2d(channels), L.relu(), L.maxpool2d(2)]
    specs += [L.flatten(), L.dense(class_count), L.softmax()]
    return build_network(specs, input_shape, seed)


class MultiExitClassifier(ClassifierMixin, BaseEstimator):
    """Image classifier with early-exit branches trained under a curriculum.

    fit() trains a small convolutional backbone (unless one is supplied),
    freezes it, attaches branch heads, and trains each head with the chosen
    strategy: "vanilla", "curriculum", "anti_curriculum", or
    "random_curriculum". Difficulty comes from the backbone's own per-sample
    loss (teacher="self") or a supplied teacher network. predict() applies
    entropy-gated early exit: a sample leaves at the first branch whose
    predictive entropy is below ``entropy_threshold`` (inf exits everything at
    the first branch, 0 always falls through to the final output).

    Parameters follow scikit-learn conventions; X may be (N, C, H, W) or 2-D
    with ``input_shape`` set.
    """

    def __init__(self, branch_locations=(3,), strategy="curriculum", pacing=None,
                 teacher="self", optimizer="adam", learning_rate=1e-3, epochs=30,
                 batch_size=32, entropy_threshold=math.inf, backbone=None,
                 backbone_epochs=10, conv_channels=(8, 16), input_shape=None,
                 validation_fraction=0.15, random_state=0):
        self.branch_locations = branch_locations
        self.strategy = strategy
        self.pacing = pacing
        self.teacher = teacher
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.entropy_threshold = entropy_threshold
        self.backbone = backbone
        self.backbone_epochs = backbone_epochs
        self.conv_channels = conv_channels
        self.input_shape = input_shape
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    # -- sklearn plumbing ---------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this MultiExitClassifier is not fitted; call fit first")

    def _encode(self, y):
        return np.searchsorted(self.classes_, y)

    # -- core ---------------------------------------------------------------

    def fit(self, X, y):
        X = check_inputs(X, self.input_shape)
        y = check_labels(y, len(X))
        if X.ndim != 4:
            raise ConfigError("inputs must be (N, C, H, W); pass input_shape to "
                              "reshape flat features")
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValueError(f"need at least 2 classes, got {len(self.classes_)}")
        codes = self._encode(y).astype(np.int64)
        rng = np.random.default_rng(self.random_state)

        n_val = max(int(self.validation_fraction * len(X)), 1)
        order = rng.permutation(len(X))
        val_idx, train_idx = order[:n_val], order[n_val:]
        Xtr, ytr = X[train_idx], codes[train_idx]
        Xval, yval = X[val_idx], codes[val_idx]

        opt = OptimizerConfig(kind=self.optimizer, learning_rate=self.learning_rate)
        backbone = self.backbone
        if backbone is None:
            from .harness.protocol import train_network
            backbone = conv_backbone(tuple(X.shape[1:]), len(self.classes_),
                                     tuple(self.conv_channels),
                                     seed=[self.random_state, 1])
            train_network(backbone, Xtr, ytr, Xval, yval, opt, self.backbone_epochs,
                          self.batch_size, np.random.default_rng([self.random_state, 2]))
        self.backbone_validation_accuracy_, _ = evaluate(backbone, Xval, yval)

        specs = [loc if isinstance(loc, BranchSpec) else BranchSpec(int(loc))
                 for loc in self.branch_locations]
        model = attach_branches(backbone, specs, seed=[self.random_state, 3])

        difficulty = None
        if self.strategy in ("curriculum", "anti_curriculum"):
            teacher = backbone if self.teacher == "self" else self.teacher
            difficulty = cur.score_with_teacher(teacher, Xtr, ytr)
        strategy = cur.Strategy(self.strategy, self._pacing_config(),
                                order_seed=int(rng.integers(2 ** 63)))

        self.history_ = {}
        for spec in specs:
            stream = cur.strategy_stream(strategy, difficulty, len(Xtr), self.batch_size,
                                         self.epochs,
                                         np.random.default_rng([self.random_state, 4,
                                                                spec.location]))
            self.history_[spec.location] = train_branch(
                model, spec.location, Xtr, ytr, Xval, yval, stream, opt, self.epochs,
                rng=np.random.default_rng([self.random_state, 5, spec.location]))
        self.model_ = model
        return self

    def _pacing_config(self):
        if self.strategy == "vanilla":
            return None
        if self.pacing is None:
            return cur.fixed_exponential_pacing(0.04, 1.9, 100)
        if isinstance(self.pacing, cur.PacingConfig):
            return self.pacing
        return cur.PacingConfig.from_dict(dict(self.pacing))

    def predict(self, X):
        self._check_fitted()
        X = check_inputs(X, self.input_shape)
        preds, _ = predict_with_policy(self.model_, X,
                                       ExitPolicy(self.entropy_threshold))
        return self.classes_[preds]

    def predict_proba(self, X):
        """Probabilities from the exit each sample actually takes."""
        self._check_fitted()
        X = check_inputs(X, self.input_shape)
        policy = ExitPolicy(self.entropy_threshold)
        probs = exit_probabilities(self.model_, X)
        _, exits = predict_with_policy(self.model_, X, policy)
        return np.stack([probs[e][i] for i, e in enumerate(exits)])

    def predict_exits(self, X):
        """Exit per sample: a branch location, or None for the final output."""
        self._check_fitted()
        X = check_inputs(X, self.input_shape)
        _, exits = predict_with_policy(self.model_, X, ExitPolicy(self.entropy_threshold))
        return exits
