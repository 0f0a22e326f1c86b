import math

import numpy as np
import pytest
import torch

from dpc_explain.errors import ParameterError, StructuralError
from dpc_explain.modeling_classifier import (
    ClassifierSpec,
    evaluate_classifier,
    fit_network,
    per_class_accuracy,
    predict_label,
    predict_proba,
    train_classifier,
    widen_spec,
)
from dpc_explain.modeling_dense import (
    DTYPE,
    RngState,
    backward,
    binary_cross_entropy,
    forward,
    init_dense_net,
    predict,
    softmax_cross_entropy,
)
from dpc_explain.optimization import OptimizerConfig
from dpc_explain.utils_data import Dataset


class TestSpec:
    def test_widen(self):
        assert widen_spec(ClassifierSpec([32, 16])).hidden_widths == [32, 16, 16]
        assert widen_spec(ClassifierSpec([], 3)).hidden_widths == [3]

    def test_layout(self):
        net = ClassifierSpec([5, 4], 3).build(6, RngState(0))
        assert [layer.activation for layer in net.layers] == ["tanh", "tanh", "softmax"]
        assert all(layer.bias is not None for layer in net.layers)
        assert net.hidden_widths == [5, 4]

    @pytest.mark.parametrize("kwargs", [{"hidden_widths": [0]}, {"class_count": 1}, {"activation": "sigmoid"}])
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            ClassifierSpec(**kwargs)


class TestPrediction:
    def test_outputs_lie_on_simplex(self, rng):
        net = ClassifierSpec([8], 4).build(3, rng)
        probs = predict_proba(net, rng.uniform((50, 3), -1.0, 1.0))
        assert bool((probs >= 0).all())
        np.testing.assert_allclose(probs.sum(dim=1).numpy(), np.ones(50), rtol=0, atol=1e-12)

    def test_label_is_argmax(self, rng):
        net = ClassifierSpec([8], 4).build(3, rng)
        x = rng.uniform((50, 3), -1.0, 1.0)
        assert torch.equal(predict_label(net, x), torch.argmax(predict(net, x), dim=1))

    def test_requires_probability_output(self, rng):
        net = init_dense_net(3, [2], ["identity"], rng)
        with pytest.raises(StructuralError):
            predict_proba(net, torch.zeros(3, dtype=DTYPE))

    def test_empty_dataset_accuracy(self, rng):
        net = ClassifierSpec([4]).build(3, rng)
        empty = Dataset(torch.zeros((0, 3), dtype=DTYPE), torch.zeros(0, dtype=torch.long), 2)
        assert math.isnan(evaluate_classifier(net, empty))


class TestCrossEntropyGradients:
    def test_softmax(self, rng):
        net = ClassifierSpec([5], 3).build(4, rng)
        x = rng.uniform((6, 4), -1.0, 1.0)
        targets = torch.tensor([0, 1, 2, 2, 1, 0])

        def total():
            return float(softmax_cross_entropy(predict(net, x), targets)[0].sum())

        activations = forward(net, x)
        _, grad = softmax_cross_entropy(activations[-1], targets)
        grads = backward(net, activations, grad, preactivation=True)
        for analytic, param in zip(grads.as_list(), net.parameters()):
            flat = param.view(-1)
            for i in range(flat.numel()):
                saved = float(flat[i])
                flat[i] = saved + 1e-6
                upper = total()
                flat[i] = saved - 1e-6
                lower = total()
                flat[i] = saved
                assert abs(float(analytic.view(-1)[i]) - (upper - lower) / 2e-6) <= 1e-6

    def test_binary(self, rng):
        net = init_dense_net(3, [4, 1], ["tanh", "sigmoid"], rng, bias=True)
        x = rng.uniform((5, 3), -1.0, 1.0)
        targets = torch.tensor([0.0, 1.0, 1.0, 0.0, 1.0], dtype=DTYPE)

        def total():
            return float(binary_cross_entropy(predict(net, x), targets)[0].sum())

        activations = forward(net, x)
        _, grad = binary_cross_entropy(activations[-1], targets)
        grads = backward(net, activations, grad, preactivation=True)
        weights = net.layers[0].weights
        for i in range(weights.shape[0]):
            for j in range(weights.shape[1]):
                saved = float(weights[i, j])
                weights[i, j] = saved + 1e-6
                upper = total()
                weights[i, j] = saved - 1e-6
                lower = total()
                weights[i, j] = saved
                assert abs(float(grads.weights[0][i, j]) - (upper - lower) / 2e-6) <= 1e-6


class TestTraining:
    def test_zero_epochs_returns_initialization(self, blobs):
        spec = ClassifierSpec([6])
        net = train_classifier(spec, blobs, epochs=0, rng=RngState(3))
        for a, b in zip(net.parameters(), spec.build(blobs.feature_dim, RngState(3).spawn("init")).parameters()):
            assert torch.equal(a, b)

    def test_deterministic(self, blobs):
        a = train_classifier(ClassifierSpec([6]), blobs, epochs=3, batch_size=16, rng=RngState(4))
        b = train_classifier(ClassifierSpec([6]), blobs, epochs=3, batch_size=16, rng=RngState(4))
        for x, y in zip(a.parameters(), b.parameters()):
            assert torch.equal(x, y)

    def test_needs_rng_and_enough_outputs(self, blobs):
        with pytest.raises(ParameterError):
            train_classifier(ClassifierSpec([6]), blobs, epochs=1)
        wide = Dataset(blobs.features, blobs.labels, 3)
        with pytest.raises(ParameterError):
            train_classifier(ClassifierSpec([6], 2), wide, epochs=1, rng=RngState(0))

    def test_target_model_is_accurate(self, toy_pipeline):
        target = toy_pipeline["target"]
        assert evaluate_classifier(target, toy_pipeline["test"]) >= 0.95
        breakdown = per_class_accuracy(target, toy_pipeline["test"])
        assert sorted(breakdown) == ["0", "1"]

    def test_binary_output_learns_separable_blobs(self, blobs):
        net = init_dense_net(4, [1], ["sigmoid"], RngState(5), bias=True)
        net = fit_network(net, blobs.features, blobs.labels.to(DTYPE), 50, 16, RngState(6),
                          optimizer=OptimizerConfig(lr=1e-2), loss="binary")
        predicted = (predict(net, blobs.features).reshape(-1) > 0.5).long()
        assert float((predicted == blobs.labels).to(DTYPE).mean()) > 0.95

    def test_unknown_loss(self, blobs):
        net = ClassifierSpec([4]).build(4, RngState(0))
        with pytest.raises(ParameterError):
            fit_network(net, blobs.features, blobs.labels, 1, 8, RngState(0), loss="hinge")
