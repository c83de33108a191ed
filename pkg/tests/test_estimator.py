"""The scikit-learn estimator surface."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from branchwise import BranchSpec, MultiExitClassifier, curriculum as cur, \
    generate_synthetic
from branchwise.errors import ConfigError, ShapeError

# converges on the module task in well under a second; the default pacing
# FEP(100) would never saturate over so few batches, so pick a fast one
FAST = dict(branch_locations=(BranchSpec(3, conv_filters=4, dense_units=(16,),
                                         dropout_rate=0.25),),
            conv_channels=(4,), backbone_epochs=8, epochs=10, learning_rate=0.01,
            pacing=cur.fixed_exponential_pacing(0.3, 2.0, 4), random_state=0)


@pytest.fixture(scope="module")
def image_data():
    data = generate_synthetic(3, (1, 6, 6), 300, noise=0.5, seed=21)
    return data.inputs, data.labels


@pytest.fixture(scope="module")
def fitted(image_data):
    X, y = image_data
    return MultiExitClassifier(**FAST).fit(X, y)


def test_get_params_round_trips_and_clones():
    est = MultiExitClassifier(epochs=3, learning_rate=0.01)
    params = est.get_params()
    assert params["epochs"] == 3
    assert params["learning_rate"] == 0.01
    rebuilt = MultiExitClassifier(**params)
    assert rebuilt.get_params() == params
    cloned = clone(est)
    assert cloned.get_params() == params


def test_set_params_chains():
    est = MultiExitClassifier()
    assert est.set_params(epochs=2, strategy="vanilla") is est
    assert est.epochs == 2
    assert est.strategy == "vanilla"


def test_unfitted_estimator_refuses_to_predict(image_data):
    X, _ = image_data
    est = MultiExitClassifier()
    for method in (est.predict, est.predict_proba, est.predict_exits):
        with pytest.raises(NotFittedError):
            method(X)


def test_fit_predict_beats_chance(fitted, image_data):
    X, y = image_data
    accuracy = (fitted.predict(X) == y).mean()
    assert accuracy > 0.5  # 3 classes
    assert fitted.score(X, y) == pytest.approx(accuracy)
    assert np.array_equal(fitted.classes_, [0, 1, 2])
    assert set(fitted.history_) == {3}
    assert len(fitted.history_[3]) == FAST["epochs"]


def test_predict_maps_back_to_original_label_values(image_data):
    X, y = image_data
    relabeled = np.array([2, 5, 9])[y]
    est = MultiExitClassifier(**FAST).fit(X, relabeled)
    assert np.array_equal(est.classes_, [2, 5, 9])
    preds = est.predict(X[:40])
    assert set(np.unique(preds)) <= {2, 5, 9}
    baseline = MultiExitClassifier(**FAST).fit(X, y).predict(X[:40])
    assert np.array_equal(preds, np.array([2, 5, 9])[baseline])


def test_predict_proba_rows_are_distributions(fitted, image_data):
    X, _ = image_data
    proba = fitted.predict_proba(X[:50])
    assert proba.shape == (50, 3)
    assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert np.array_equal(fitted.classes_[proba.argmax(axis=1)], fitted.predict(X[:50]))


def test_exit_threshold_extremes(fitted, image_data):
    X, _ = image_data
    eager = clone(fitted).set_params(entropy_threshold=np.inf)
    eager.model_ = fitted.model_
    eager.classes_ = fitted.classes_
    assert eager.predict_exits(X[:20]) == [3] * 20
    never = clone(fitted).set_params(entropy_threshold=0.0)
    never.model_ = fitted.model_
    never.classes_ = fitted.classes_
    assert never.predict_exits(X[:20]) == [None] * 20


def test_flat_inputs_reshape_through_input_shape(image_data):
    X, y = image_data
    flat = X.reshape(len(X), -1)
    est = MultiExitClassifier(input_shape=(1, 6, 6), **FAST).fit(flat[:160], y[:160])
    preds = est.predict(flat[160:])
    assert (preds == y[160:]).mean() > 0.4
    with pytest.raises(ShapeError, match="features"):
        est.predict(flat[:5, :30])


def test_flat_inputs_without_input_shape_are_rejected(image_data):
    X, y = image_data
    with pytest.raises(ConfigError, match="input_shape"):
        MultiExitClassifier(**FAST).fit(X.reshape(len(X), -1), y)


def test_fit_is_deterministic_per_random_state(image_data):
    X, y = image_data
    a = MultiExitClassifier(**FAST).fit(X[:160], y[:160])
    b = MultiExitClassifier(**FAST).fit(X[:160], y[:160])
    assert np.array_equal(a.predict(X[160:]), b.predict(X[160:]))
    bytes_a = a.model_.branches[3].params.to_bytes()
    bytes_b = b.model_.branches[3].params.to_bytes()
    assert bytes_a == bytes_b
    c = MultiExitClassifier(**{**FAST, "random_state": 1}).fit(X[:160], y[:160])
    assert c.model_.branches[3].params.to_bytes() != bytes_a


def test_prefitted_backbone_is_used_as_is(fitted, image_data):
    X, y = image_data
    backbone = fitted.model_.backbone
    before = backbone.params.to_bytes()
    est = MultiExitClassifier(backbone=backbone, **FAST).fit(X, y)
    assert est.model_.backbone is backbone
    assert backbone.params.to_bytes() == before
    assert (est.predict(X) == y).mean() > 0.5


def test_strategy_variants_fit(image_data):
    X, y = image_data
    for strategy in ("vanilla", "anti_curriculum", "random_curriculum"):
        est = MultiExitClassifier(**{**FAST, "epochs": 2, "strategy": strategy})
        est.fit(X[:120], y[:120])
        assert est.predict(X[:10]).shape == (10,)


def test_single_class_labels_are_rejected(image_data):
    X, _ = image_data
    with pytest.raises(ValueError, match="2 classes"):
        MultiExitClassifier(**FAST).fit(X[:40], np.zeros(40, dtype=int))
