import math

import numpy as np
import pytest
import scipy.sparse as sp

from quantbench.classifier import (LogisticModel, confusion_rates, cross_val_confusion, lr_objective,
                                   predict_hard, predict_proba, stratified_folds, train_lr)
from quantbench.core import Codeframe, LabelledCollection, SparseDocument

CF = Codeframe.sentiment()


def fixed_model(bias, n_features=4):
    return LogisticModel(np.zeros((len(bias), n_features)), np.asarray(bias, dtype=float), CF, 1.0)


def test_separable_binary_toy():
    cf = Codeframe(("a", "b"))
    X = sp.csr_matrix(np.array([[1, 0], [2, 0], [0, 1], [0, 3]], dtype=float))
    data = LabelledCollection(X, [0, 0, 1, 1], cf)
    model = train_lr(data, C=1e4)
    assert np.all(predict_hard(model, X) == data.labels)


def test_gradient_matches_finite_differences(bundle):
    data = bundle.validation
    model = train_lr(data, C=10.0)
    theta = np.concatenate([model.weights.ravel(), model.bias])
    rng = np.random.default_rng(0)
    # at the optimum and at a random point where gradients are large
    for point in (theta, theta + rng.normal(scale=0.5, size=theta.shape)):
        _, grad = lr_objective(point, data, 10.0)
        h = 1e-5
        for i in rng.choice(len(point), size=40, replace=False):
            e = np.zeros_like(point)
            e[i] = h
            fd = (lr_objective(point + e, data, 10.0)[0] - lr_objective(point - e, data, 10.0)[0]) / (2 * h)
            assert abs(fd - grad[i]) <= 1e-4 * max(abs(grad[i]), 1.0)


def test_strong_regularisation_flattens_posteriors(bundle):
    model = train_lr(bundle.train, C=1e-4)
    P = predict_proba(model, bundle.test.X)
    assert np.max(np.abs(P - bundle.train.prevalence())) < 0.05


def test_loss_is_non_increasing_and_converges(bundle):
    model = train_lr(bundle.train, C=1.0)
    h = np.asarray(model.loss_history)
    assert len(h) >= 2 and np.all(np.diff(h) <= 1e-9 * np.abs(h[:-1]))
    _, grad = lr_objective(model, bundle.train)
    assert np.max(np.abs(grad)) < 1e-5 or model.n_iter == 1000


def test_training_is_deterministic(bundle):
    a, b = train_lr(bundle.validation, 1.0, seed=1), train_lr(bundle.validation, 1.0, seed=1)
    np.testing.assert_array_equal(a.weights, b.weights)
    np.testing.assert_array_equal(a.bias, b.bias)


def test_degenerate_training_set():
    data = LabelledCollection(sp.csr_matrix(np.eye(3)), [1, 1, 1], CF)
    with pytest.raises(ValueError, match="degenerate training set"):
        train_lr(data)


def test_predict_proba_examples():
    assert np.allclose(predict_proba(fixed_model([0, 0, 0]), np.eye(4)), 1 / 3)
    P = predict_proba(fixed_model([math.log(2), 0, 0]), [SparseDocument()])
    np.testing.assert_allclose(P, [[0.5, 0.25, 0.25]], atol=1e-15)


def test_rows_are_distributions_for_arbitrary_inputs(bundle, rng):
    model = train_lr(bundle.validation, 1.0)
    X = sp.random(200, bundle.n_features + 20, density=0.05, random_state=1) * 50
    P = predict_proba(model, X)
    np.testing.assert_allclose(P.sum(axis=1), 1, atol=1e-9)
    assert np.all(P >= 0)


def test_predict_hard_examples_and_tie_break():
    assert predict_hard(fixed_model(np.log([0.2, 0.5, 0.3])), [SparseDocument()])[0] == 1
    assert predict_hard(fixed_model(np.log([0.4, 0.4, 0.2])), [SparseDocument()])[0] == 0


def test_hard_is_argmax_of_soft(bundle):
    model = train_lr(bundle.train, 1.0)
    X = sp.random(1000, bundle.n_features, density=0.03, random_state=2, format="csr")
    np.testing.assert_array_equal(predict_hard(model, X), np.argmax(predict_proba(model, X), axis=1))


def test_save_load_roundtrip(tmp_path, bundle):
    model = train_lr(bundle.validation, 3.0)
    model.save(tmp_path / "m.npz")
    again = LogisticModel.load(tmp_path / "m.npz")
    np.testing.assert_array_equal(again.weights, model.weights)
    np.testing.assert_array_equal(again.bias, model.bias)
    assert again.codeframe == model.codeframe and again.C == 3.0


def test_stratified_folds_balance():
    labels = np.repeat([0, 1, 2], [50, 23, 7])
    folds = stratified_folds(labels, 5, seed=0)
    for c in range(3):
        sizes = np.bincount(folds[labels == c], minlength=5)
        assert sizes.max() - sizes.min() <= 1


def test_confusion_identity_for_separable_data(separable):
    rates, _ = cross_val_confusion(separable.train, 1e3, 5, "hard")
    np.testing.assert_allclose(rates, np.eye(3), atol=1e-9)


@pytest.mark.parametrize("mode", ["hard", "soft"])
def test_confusion_matches_recount(bundle, mode):
    data = bundle.train
    rates, oof = cross_val_confusion(data, 1.0, 5, mode)
    np.testing.assert_allclose(rates.sum(axis=0), 1, atol=1e-6)
    assert np.all((rates >= 0) & (rates <= 1))
    pred = np.argmax(oof, axis=1)
    for j in range(3):
        members = data.labels == j
        for i in range(3):
            expected = np.mean(pred[members] == i) if mode == "hard" else oof[members, i].mean()
            assert rates[i, j] == pytest.approx(expected, abs=1e-12)


def test_confusion_rates_empty_column_is_identity():
    rates = confusion_rates([0, 0, 1], [0, 1, 1], 3, "hard")
    np.testing.assert_allclose(rates[:, 2], [0, 0, 1])
    with pytest.raises(ValueError):
        confusion_rates([0], [0], 3, "fuzzy")


def test_absent_class_and_scarce_class(bundle):
    only_two = bundle.train.sampling_from_index(np.flatnonzero(bundle.train.labels < 2))
    with pytest.raises(ValueError, match="absent"):
        cross_val_confusion(only_two, 1.0)
    idx = np.concatenate([np.flatnonzero(bundle.train.labels < 2), np.flatnonzero(bundle.train.labels == 2)[:3]])
    with pytest.warns(UserWarning, match="fewer than 5"):
        rates, _ = cross_val_confusion(bundle.train.sampling_from_index(idx), 1.0)
    np.testing.assert_allclose(rates.sum(axis=0), 1, atol=1e-6)
