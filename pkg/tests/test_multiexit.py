"""Branch attachment, head training against a frozen backbone, exit policies."""

import numpy as np
import pytest

from branchwise import multiexit as me
from branchwise import nn
from branchwise.curriculum import schedule_stream
from branchwise.errors import ConfigError, ShapeError

SMALL_HEAD = dict(conv_filters=8, dense_units=(16,), dropout_rate=0.25)
ADAM = nn.OptimizerConfig(kind="adam", learning_rate=1e-3)


def _vanilla_batches(n, batch_size, epochs, seed):
    return schedule_stream(np.arange(n), None, n, batch_size, epochs,
                           np.random.default_rng(seed))


def _train(model, location, splits, epochs=5, batch_size=32, stream_seed=4,
           dropout_seed=9, cache_activations=True):
    train = splits.train
    return me.train_branch(model, location, train.inputs, train.labels,
                           splits.validation.inputs, splits.validation.labels,
                           _vanilla_batches(len(train), batch_size, epochs, stream_seed),
                           ADAM, epochs, rng=np.random.default_rng(dropout_seed),
                           cache_activations=cache_activations)


# -- attachment ----------------------------------------------------------------


def test_attach_validates_locations(trained_setup):
    backbone = trained_setup.backbone
    with pytest.raises(ConfigError, match="outside"):
        me.attach_branches(backbone, [me.BranchSpec(0)], seed=0)
    with pytest.raises(ConfigError, match="outside"):
        me.attach_branches(backbone, [me.BranchSpec(len(backbone.layers) + 1)], seed=0)
    with pytest.raises(ConfigError, match="duplicate"):
        me.attach_branches(backbone, [me.BranchSpec(3), me.BranchSpec(3)], seed=0)
    with pytest.raises(ShapeError, match="tap shape"):
        me.attach_branches(backbone, [me.BranchSpec(7)], seed=0)  # post-flatten tap


def test_attach_freezes_the_backbone(trained_setup):
    model = me.attach_branches(trained_setup.backbone, [me.BranchSpec(3)], seed=0)
    assert model.backbone.params.all_frozen()
    assert not model.branches[3].params.all_frozen()
    assert model.locations == [3]
    assert model.class_count == 3


def test_branch_init_is_seed_deterministic_and_order_independent(trained_setup):
    backbone = trained_setup.backbone
    spec3 = me.BranchSpec(3, **SMALL_HEAD)
    spec6 = me.BranchSpec(6, **SMALL_HEAD)
    both = me.attach_branches(backbone, [spec3, spec6], seed=11)
    again = me.attach_branches(backbone, [spec6, spec3], seed=11)
    alone = me.attach_branches(backbone, [spec6], seed=11)
    other = me.attach_branches(backbone, [spec6], seed=12)
    assert both.branches[6].params.to_bytes() == again.branches[6].params.to_bytes()
    assert both.branches[6].params.to_bytes() == alone.branches[6].params.to_bytes()
    assert both.branches[3].params.to_bytes() == again.branches[3].params.to_bytes()
    assert both.branches[6].params.to_bytes() != other.branches[6].params.to_bytes()
    assert both.branches[3].params.to_bytes() != both.branches[6].params.to_bytes()


def test_head_layout_ends_in_class_softmax(trained_setup):
    model = me.attach_branches(trained_setup.backbone,
                               [me.BranchSpec(3, dense_units=(32, 16))], seed=0)
    branch = model.branches[3]
    kinds = [spec.kind for spec in branch.layers]
    assert kinds == ["conv2d", "maxpool2d", "flatten", "dense", "dropout",
                     "dense", "dropout", "dense", "softmax"]
    assert branch.output_shape == (3,)


def test_backbone_activations_match_full_forward(trained_setup):
    model = me.attach_branches(trained_setup.backbone, [me.BranchSpec(3)], seed=0)
    x = trained_setup.splits.test.inputs[:64]
    _, cache = nn.forward(model.backbone, x)
    taps = me.backbone_activations(model, x, 3)
    assert np.array_equal(taps, cache.activations[3])
    assert taps.shape == (64, 4, 4, 4)


# -- training ------------------------------------------------------------------


def test_train_branch_beats_chance(trained_setup):
    model = me.attach_branches(trained_setup.backbone,
                               [me.BranchSpec(3, **SMALL_HEAD)], seed=1)
    history = _train(model, 3, trained_setup.splits, epochs=6)
    assert len(history) == 6
    assert [m.epoch for m in history] == list(range(6))
    accuracy, loss = me.evaluate_exit(model, 3, trained_setup.splits.test.inputs,
                                      trained_setup.splits.test.labels)
    assert accuracy > 0.5  # 3 classes, chance is 1/3
    assert np.isfinite(loss)


def test_train_branch_zero_epochs_changes_nothing(trained_setup):
    model = me.attach_branches(trained_setup.backbone,
                               [me.BranchSpec(3, **SMALL_HEAD)], seed=1)
    before = model.branches[3].params.to_bytes()
    history = _train(model, 3, trained_setup.splits, epochs=0)
    assert history == []
    assert model.branches[3].params.to_bytes() == before


def test_training_never_touches_the_backbone(trained_setup):
    model = me.attach_branches(trained_setup.backbone,
                               [me.BranchSpec(3, **SMALL_HEAD)], seed=1)
    before = model.backbone.params.to_bytes()
    _train(model, 3, trained_setup.splits, epochs=3)
    assert model.backbone.params.to_bytes() == before


def test_cached_and_recomputed_activations_train_identically(trained_setup):
    results = []
    for cached in (True, False):
        model = me.attach_branches(trained_setup.backbone,
                                   [me.BranchSpec(3, **SMALL_HEAD)], seed=2)
        history = _train(model, 3, trained_setup.splits, epochs=3,
                         cache_activations=cached)
        results.append((model.branches[3].params.to_bytes(), history))
    assert results[0][0] == results[1][0]
    assert results[0][1] == results[1][1]


def test_branches_train_independently(trained_setup):
    spec3 = me.BranchSpec(3, **SMALL_HEAD)
    spec6 = me.BranchSpec(6, **SMALL_HEAD)
    both = me.attach_branches(trained_setup.backbone, [spec3, spec6], seed=7)
    _train(both, 3, trained_setup.splits, epochs=2, dropout_seed=1)
    _train(both, 6, trained_setup.splits, epochs=2, dropout_seed=2)
    alone = me.attach_branches(trained_setup.backbone, [spec6], seed=7)
    _train(alone, 6, trained_setup.splits, epochs=2, dropout_seed=2)
    assert both.branches[6].params.to_bytes() == alone.branches[6].params.to_bytes()


def test_train_branch_rejects_missing_location_and_short_stream(trained_setup):
    model = me.attach_branches(trained_setup.backbone,
                               [me.BranchSpec(3, **SMALL_HEAD)], seed=1)
    splits = trained_setup.splits
    with pytest.raises(ConfigError, match="no branch at location 6"):
        me.train_branch(model, 6, splits.train.inputs, splits.train.labels,
                        splits.validation.inputs, splits.validation.labels,
                        [], ADAM, 1)
    short = [np.arange(32)]  # one batch cannot cover an epoch
    with pytest.raises(ValueError, match="exhausted"):
        me.train_branch(model, 3, splits.train.inputs, splits.train.labels,
                        splits.validation.inputs, splits.validation.labels,
                        short, ADAM, 1, rng=np.random.default_rng(0))


def test_learning_rate_in_history_follows_the_plateau_schedule(trained_setup):
    model = me.attach_branches(trained_setup.backbone,
                               [me.BranchSpec(3, **SMALL_HEAD)], seed=1)
    history = _train(model, 3, trained_setup.splits, epochs=4)
    assert history[0].learning_rate == 1e-3
    for metrics in history:
        assert metrics.learning_rate in (1e-3, 5e-4, 2.5e-4)


# -- exits ---------------------------------------------------------------------


def test_entropy_reference_values():
    assert me.entropy(np.array([1.0, 0.0, 0.0])) == 0.0
    assert me.entropy(np.array([0.5, 0.5])) == pytest.approx(np.log(2.0), abs=1e-15)
    uniform = np.full(4, 0.25)
    assert me.entropy(uniform) == pytest.approx(np.log(4.0), abs=1e-15)
    batch = me.entropy(np.array([[1.0, 0.0], [0.5, 0.5]]))
    assert batch.shape == (2,)
    assert batch[0] == 0.0


def test_exit_policy_validation():
    me.ExitPolicy(0.0)
    me.ExitPolicy(float("inf"))
    with pytest.raises(ConfigError, match=">= 0"):
        me.ExitPolicy(-0.1)
    with pytest.raises(ConfigError, match=">= 0"):
        me.ExitPolicy(float("nan"))


@pytest.fixture(scope="module")
def exit_model(trained_setup):
    model = me.attach_branches(trained_setup.backbone,
                               [me.BranchSpec(3, **SMALL_HEAD),
                                me.BranchSpec(6, **SMALL_HEAD)], seed=3)
    _train(model, 3, trained_setup.splits, epochs=5, dropout_seed=5)
    _train(model, 6, trained_setup.splits, epochs=5, dropout_seed=6)
    return model


def test_infinite_threshold_exits_everything_at_the_first_branch(exit_model, trained_setup):
    x = trained_setup.splits.test.inputs
    preds, exits = me.predict_with_policy(exit_model, x, me.ExitPolicy(float("inf")))
    assert exits == [3] * len(x)
    branch_probs = me.exit_probabilities(exit_model, x)[3]
    assert np.array_equal(preds, branch_probs.argmax(axis=1))


def test_zero_threshold_never_exits_early(exit_model, trained_setup):
    x = trained_setup.splits.test.inputs
    preds, exits = me.predict_with_policy(exit_model, x, me.ExitPolicy(0.0))
    assert exits == [None] * len(x)
    final_probs = me.exit_probabilities(exit_model, x)[None]
    assert np.array_equal(preds, final_probs.argmax(axis=1))


def test_early_exit_fraction_grows_with_the_threshold(exit_model, trained_setup):
    x = trained_setup.splits.test.inputs
    fractions = []
    for threshold in (0.0, 0.05, 0.2, 0.5, np.log(3.0), np.inf):
        _, exits = me.predict_with_policy(exit_model, x, me.ExitPolicy(threshold))
        fractions.append(sum(e is not None for e in exits) / len(x))
    assert fractions == sorted(fractions)
    assert fractions[0] == 0.0
    assert fractions[-1] == 1.0


def test_interior_threshold_splits_the_exits(exit_model, trained_setup):
    x = trained_setup.splits.test.inputs
    entropies = me.entropy(me.exit_probabilities(exit_model, x)[3])
    threshold = float(np.median(entropies))
    _, exits = me.predict_with_policy(exit_model, x, me.ExitPolicy(threshold))
    taken = sum(e is not None for e in exits)
    assert 0 < taken < len(x)


def test_threshold_is_a_strict_bound(exit_model, trained_setup):
    x = trained_setup.splits.test.inputs
    probs = me.exit_probabilities(exit_model, x)
    boundary = float(me.entropy(probs[3][0]))
    _, exits = me.predict_with_policy(exit_model, x, me.ExitPolicy(boundary))
    assert exits[0] != 3  # its own entropy is not strictly below the threshold


def test_single_sample_inference_agrees_with_batched(exit_model, trained_setup):
    x = trained_setup.splits.test.inputs
    policy = me.ExitPolicy(0.7)
    preds, exits = me.predict_with_policy(exit_model, x, policy)
    for i in range(0, len(x), 7):
        cls, exit_at = me.infer_with_policy(exit_model, x[i], policy)
        assert cls == preds[i]
        assert exit_at == exits[i]


def test_infer_rejects_wrong_shape(exit_model):
    with pytest.raises(ShapeError, match="expected input shape"):
        me.infer_with_policy(exit_model, np.zeros((2, 2)), me.ExitPolicy(0.5))


def test_final_exit_is_untouched_by_branch_training(trained_setup):
    x = trained_setup.splits.test.inputs
    before = nn.predict_proba(trained_setup.backbone, x)
    model = me.attach_branches(trained_setup.backbone,
                               [me.BranchSpec(3, **SMALL_HEAD)], seed=8)
    _train(model, 3, trained_setup.splits, epochs=3)
    after = me.exit_probabilities(model, x)[None]
    assert np.array_equal(before, after)


def test_evaluate_exit_final_matches_network_evaluate(trained_setup):
    model = me.attach_branches(trained_setup.backbone, [me.BranchSpec(3)], seed=0)
    x = trained_setup.splits.test.inputs
    y = trained_setup.splits.test.labels
    accuracy, loss = me.evaluate_exit(model, None, x, y)
    expected = nn.evaluate(trained_setup.backbone, x, y)
    assert (accuracy, loss) == expected
    with pytest.raises(ConfigError, match="no branch at location"):
        me.evaluate_exit(model, 5, x, y)
