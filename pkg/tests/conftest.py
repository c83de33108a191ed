from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("deterministic", derandomize=True, deadline=None,
                          suppress_health_check=list(HealthCheck))
settings.load_profile("deterministic")

from branchwise import SplitSpec, generate_synthetic, split
from branchwise.estimator import conv_backbone
from branchwise.harness.protocol import train_network
from branchwise.nn.optim import OptimizerConfig


@pytest.fixture(scope="session")
def trained_setup():
    """A small trained-and-frozen backbone over a synthetic image task.

    Shared read-only: the backbone is frozen, so tests may attach branches to
    it but must not retrain it.
    """
    data = generate_synthetic(3, (1, 8, 8), 600, noise=0.9, seed=11)
    splits = split(data, SplitSpec(seed=3))
    backbone = conv_backbone((1, 8, 8), 3, (4, 8), seed=[1, 0])
    train_network(backbone, splits.train.inputs, splits.train.labels,
                  splits.validation.inputs, splits.validation.labels,
                  OptimizerConfig(), epochs=8, batch_size=32,
                  rng=np.random.default_rng(2))
    backbone.params.freeze()
    return SimpleNamespace(data=data, splits=splits, backbone=backbone)
