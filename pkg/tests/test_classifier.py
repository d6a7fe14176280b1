"""
Tests de preprocesamiento, red MLP, entrenamiento y referencia de centroides
"""

import numpy as np
import pytest
import torch

from classifier import (MlpModel, PcaModel, Standardizer, build_network, evaluate, fit_preprocess,
                        loss_and_gradients, nearest_centroid, predict, train_mlp)
from fingerprint import (DatasetSample, FeatureDescriptor, Fingerprint, FingerprintDataset,
                         LayoutMismatchError)
from run_config import TrainingHyper
from topology import EmbeddingResolver, pattern_topology


@pytest.fixture
def separable(toy_dataset):
    """Dos clases bien separadas en 8 dimensiones"""
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(-5.0, 0.1, (10, 8)), rng.normal(5.0, 0.1, (10, 8))])
    y = np.array([0] * 10 + [1] * 10)
    return toy_dataset(X, y)


FAST = TrainingHyper(learning_rate=0.05, max_sets=3)


# Preprocesamiento

def test_standardizer_on_standardized_data_is_identity():
    rng = np.random.default_rng(1)
    X = rng.normal(3.0, 2.0, (50, 6))
    Z = (X - X.mean(axis=0)) / X.std(axis=0)
    standardizer = Standardizer.fit(Z)
    assert np.allclose(standardizer.mean, 0.0, atol=1e-9)
    assert np.allclose(standardizer.scale, 1.0, atol=1e-9)
    assert np.allclose(Standardizer.fit(X).inverse_transform(Standardizer.fit(X).transform(X)), X)


def test_constant_feature_does_not_divide_by_zero():
    X = np.column_stack([np.arange(5.0), np.full(5, 2.0)])
    Z = Standardizer.fit(X).transform(X)
    assert np.all(np.isfinite(Z))
    assert np.allclose(Z[:, 1], 0.0)


def test_pca_components_are_orthonormal_and_ordered():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 10)) @ rng.normal(size=(10, 10))
    pca = PcaModel.fit(X, 0.99)
    assert np.allclose(pca.components @ pca.components.T, np.eye(pca.retained), atol=1e-8)
    assert np.all(np.diff(pca.explained_variance_ratio) <= 1e-12)
    assert pca.explained_variance_ratio.sum() <= 1.0 + 1e-12


def test_rank_two_data_keeps_at_most_two_components(toy_dataset):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 2)) @ rng.normal(size=(2, 7)) + 4.0
    prep = fit_preprocess(toy_dataset(X, np.arange(30) % 3), 0.95)
    assert prep.pca.retained <= 2


def test_degenerate_training_data_rejected(toy_dataset):
    with pytest.raises(ValueError):
        fit_preprocess(toy_dataset(np.ones((6, 4)), np.arange(6) % 2))
    with pytest.raises(ValueError):
        fit_preprocess(toy_dataset(np.ones((1, 4)), np.array([0])))


def test_transform_does_not_change_fitted_state(separable):
    prep = fit_preprocess(separable)
    before = prep.state_hash()
    X, _ = separable.matrix()
    prep.transform(X * 10.0)
    assert prep.state_hash() == before


# Red y gradientes

@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    network = build_network(3, 5, 4, dropout=0.2)
    inputs = rng.normal(size=(6, 3))
    targets = rng.integers(0, 4, size=6)

    _, grads = loss_and_gradients(network, inputs, targets)
    eps = 1e-6
    for param, grad in zip(network.parameters(), grads):
        flat = param.data.view(-1)
        numeric = np.zeros(flat.numel())
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + eps
            plus, _ = loss_and_gradients(network, inputs, targets)
            flat[i] = original - eps
            minus, _ = loss_and_gradients(network, inputs, targets)
            flat[i] = original
            numeric[i] = (plus - minus) / (2 * eps)
        analytic = grad.ravel()
        scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
        assert np.linalg.norm(analytic - numeric) / scale <= 1e-5


def test_zero_weights_predict_first_class(separable):
    prep = fit_preprocess(separable)
    model = train_mlp(separable, prep, TrainingHyper(max_sets=1, epochs_per_set=1))
    for param in model.network.parameters():
        torch.nn.init.zeros_(param)
    X, _ = separable.matrix()
    fingerprint = Fingerprint("pattern", "toy", 0, X[15], separable.layout)
    index, scores = predict(model, prep, fingerprint)
    assert index == 0
    assert np.allclose(scores, 0.0)


# Entrenamiento

def test_separable_problem_converges(separable):
    prep = fit_preprocess(separable)
    model = train_mlp(separable, prep, FAST, seed=5)
    assert model.converged
    assert len(model.training_log) <= 3
    assert model.training_log[-1] < 0.05
    report = evaluate(model, prep, separable)
    assert report.embedding_accuracy == 1.0
    assert report.device_accuracy == 1.0


def test_training_is_deterministic(separable):
    prep = fit_preprocess(separable)
    first = train_mlp(separable, prep, FAST, seed=9)
    second = train_mlp(separable, prep, FAST, seed=9)
    assert first.training_log == second.training_log
    for a, b in zip(first.network.state_dict().values(), second.network.state_dict().values()):
        assert torch.equal(a, b)


def test_training_cap_is_reported(separable):
    prep = fit_preprocess(separable)
    model = train_mlp(separable, prep, TrainingHyper(max_sets=1, epochs_per_set=1, loss_threshold=0.0))
    assert not model.converged
    assert len(model.training_log) == 1


def test_model_dict_preserves_scores(separable):
    prep = fit_preprocess(separable)
    model = train_mlp(separable, prep, FAST, seed=1)
    restored = MlpModel.from_dict(model.to_dict())
    X, _ = separable.matrix()
    query = Fingerprint("pattern", "toy", 0, X[3], separable.layout)
    assert np.allclose(predict(model, prep, query)[1], predict(restored, prep, query)[1])


def test_layout_mismatch_rejected(separable, toy_dataset):
    prep = fit_preprocess(separable)
    model = train_mlp(separable, prep, FAST, seed=1)
    other = toy_dataset(np.ones((2, 5)), np.array([0, 1]))
    query = Fingerprint("pattern", "toy", 0, np.ones(5), other.layout)
    with pytest.raises(LayoutMismatchError):
        predict(model, prep, query)
    with pytest.raises(LayoutMismatchError):
        evaluate(model, prep, other)


def test_empty_test_set_rejected(separable):
    prep = fit_preprocess(separable)
    model = train_mlp(separable, prep, FAST, seed=1)
    with pytest.raises(ValueError):
        evaluate(model, prep, separable.filter_batches([7]))


# Referencia de centroides

def test_nearest_centroid_on_separated_clusters(toy_dataset):
    rng = np.random.default_rng(4)
    centers = rng.normal(0.0, 10.0, (4, 6))
    X = np.vstack([c + rng.normal(0.0, 0.1, (5, 6)) for c in centers])
    y = np.repeat(np.arange(4), 5)
    dataset = toy_dataset(X, y)
    report = nearest_centroid(dataset, dataset)
    assert report.embedding_accuracy == 1.0
    assert report.confusion.trace() == 20


def test_nearest_centroid_requires_every_class(toy_dataset):
    X = np.vstack([np.zeros((3, 2)), np.ones((3, 2))])
    dataset = toy_dataset(X, np.array([0, 0, 0, 1, 1, 1]), batches=[0, 0, 0, 1, 1, 1])
    with pytest.raises(ValueError):
        nearest_centroid(dataset.filter_batches([0]), dataset)


def test_identical_class_distributions_give_chance_accuracy(fleet):
    classes = EmbeddingResolver().enumerate_embeddings(pattern_topology("L3"), fleet)
    layout = tuple(FeatureDescriptor("control_single", (k,), "hamiltonian_x") for k in range(20))
    rng = np.random.default_rng(12)
    samples = [DatasetSample(rng.normal(0.0, 1.0, 20), c, b)
               for b in range(2) for c in range(len(classes)) for _ in range(20)]
    dataset = FingerprintDataset("L3", classes, layout, samples)

    report = nearest_centroid(dataset.filter_batches([0]), dataset.filter_batches([1]))
    per_device = np.unique([e.device_id for e in classes], return_counts=True)[1] / len(classes)
    assert len(classes) == 84
    assert report.embedding_accuracy == pytest.approx(1 / 84, abs=0.012)
    assert report.device_accuracy == pytest.approx(float(np.sum(per_device ** 2)), abs=0.03)
    assert report.device_accuracy >= report.embedding_accuracy
