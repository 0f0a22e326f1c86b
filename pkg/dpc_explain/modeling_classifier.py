# coding=utf-8
""" Dense classifiers: the target model, surrogates, shadow models and attack nets. """

import logging
import math
from dataclasses import dataclass, field
from typing import List

import torch
from sklearn.metrics import accuracy_score
from tqdm import trange

from .errors import NumericError, ParameterError, StructuralError, TrainingError
from .modeling_dense import (
    DTYPE,
    backward,
    binary_cross_entropy,
    forward,
    init_dense_net,
    predict,
    softmax_cross_entropy,
)
from .optimization import OptimizerConfig

logger = logging.getLogger(__name__)


@dataclass
class ClassifierSpec:
    hidden_widths: List[int] = field(default_factory=lambda: [32, 16])
    class_count: int = 2
    activation: str = "tanh"

    def __post_init__(self):
        self.hidden_widths = [int(w) for w in self.hidden_widths]
        if any(w < 1 for w in self.hidden_widths):
            raise ParameterError("Invalid hidden widths: {} - should be positive".format(self.hidden_widths))
        if self.activation not in ("tanh", "relu"):
            raise ParameterError("Invalid activation: {} - should be 'tanh' or 'relu'".format(self.activation))
        if self.class_count < 2:
            raise ParameterError("Invalid class count: {} - should be >= 2".format(self.class_count))

    def build(self, input_dim, rng):
        widths = self.hidden_widths + [self.class_count]
        activations = [self.activation] * len(self.hidden_widths) + ["softmax"]
        return init_dense_net(input_dim, widths, activations, rng, bias=True)

    def to_dict(self):
        return {"hidden_widths": list(self.hidden_widths), "class_count": self.class_count,
                "activation": self.activation}

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


def widen_spec(spec):
    """Append one hidden layer as wide as the last one."""
    last = spec.hidden_widths[-1] if spec.hidden_widths else spec.class_count
    return ClassifierSpec(spec.hidden_widths + [last], spec.class_count, spec.activation)


def predict_proba(net, x):
    if net.layers[-1].activation not in ("softmax", "sigmoid"):
        raise StructuralError("Network output is not a probability layer")
    return predict(net, torch.as_tensor(x, dtype=DTYPE))


def predict_label(net, x):
    return torch.argmax(predict_proba(net, x), dim=-1)


def evaluate_classifier(net, dataset):
    if len(dataset) == 0:
        return float("nan")
    return float(accuracy_score(dataset.labels.numpy(), predict_label(net, dataset.features).numpy()))


def per_class_accuracy(net, dataset):
    predicted = predict_label(net, dataset.features)
    breakdown = {}
    for class_id in range(dataset.class_count):
        members = dataset.labels == class_id
        if members.any():
            breakdown[str(class_id)] = float((predicted[members] == class_id).to(DTYPE).mean())
    return breakdown


def fit_network(net, features, targets, epochs, batch_size, rng, optimizer=None, loss="softmax",
                tb_writer=None, tag="classifier", disable_progress=True):
    """Mini-batch training on the mean cross-entropy.

    ``loss`` is ``softmax`` (class-index targets) or ``binary`` (0/1 targets on a
    single sigmoid output).
    """
    if batch_size < 1:
        raise ParameterError("Invalid batch size: {} - should be >= 1".format(batch_size))
    if loss not in ("softmax", "binary"):
        raise ParameterError("Invalid loss: {} - should be 'softmax' or 'binary'".format(loss))
    optimizer = optimizer or OptimizerConfig()
    criterion = softmax_cross_entropy if loss == "softmax" else binary_cross_entropy
    n = features.shape[0]
    params = net.parameters()
    state = optimizer.init_state(params)

    logger.info("***** Running training (%s) *****", tag)
    logger.info("  Num examples = %d", n)
    logger.info("  Num Epochs = %d", epochs)

    for epoch in trange(int(epochs), desc="Epoch", disable=disable_progress):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            index = order[start:start + batch_size]
            activations = forward(net, features[index])
            losses, grad = criterion(activations[-1], targets[index])
            grad = grad.reshape(activations[-1].shape) / index.shape[0]
            try:
                grads = backward(net, activations, grad, preactivation=True)
                params, state = optimizer.step(params, grads.as_list(), state)
            except NumericError as e:
                raise TrainingError("Training of {} diverged at epoch {}: {}".format(tag, epoch, e), epoch=epoch)
            net = net.with_parameters(params)
            epoch_loss += float(losses.sum())
        if not math.isfinite(epoch_loss):
            raise TrainingError("Training of {} diverged at epoch {}".format(tag, epoch), epoch=epoch)
        if tb_writer is not None:
            tb_writer.add_scalar("{}/loss".format(tag), epoch_loss / max(n, 1), epoch)
    return net


def train_classifier(spec, train_data, epochs=100, batch_size=64, optimizer=None, rng=None, test_data=None,
                     tb_writer=None, disable_progress=True):
    """Softmax classifier on ``train_data``; weights from the ``init`` sub-stream."""
    if rng is None:
        raise ParameterError("train_classifier needs an RngState")
    if spec.class_count < train_data.class_count:
        raise ParameterError("Spec has {} outputs for {} classes".format(spec.class_count, train_data.class_count))
    net = spec.build(train_data.feature_dim, rng.spawn("init"))
    net = fit_network(
        net,
        train_data.features,
        train_data.labels,
        epochs,
        batch_size,
        rng.spawn("batches"),
        optimizer=optimizer,
        tb_writer=tb_writer,
        disable_progress=disable_progress,
    )
    logger.info("Train accuracy = %.4f", evaluate_classifier(net, train_data))
    if test_data is not None:
        logger.info("Test accuracy = %.4f", evaluate_classifier(net, test_data))
    return net
