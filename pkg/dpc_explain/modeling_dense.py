# coding=utf-8
"""Dense network numerics: seeded random streams, layers, analytic forward/backward
passes and the Laplace sampler.

All tensors are ``torch.float64`` on CPU. Every function accepts either a single
vector ``(dim,)`` or a batch ``(batch, dim)`` and returns outputs of the same rank.
"""

import hashlib
import logging
import math
import random
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import torch

from .errors import ParameterError, StructuralError

logger = logging.getLogger(__name__)

DTYPE = torch.float64
ACTIVATIONS = ("sigmoid", "tanh", "relu", "softmax", "identity", "affine_norm")

_MAX_SEED = 2 ** 64


def set_seed(seed):
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


class RngState(object):
    """A seeded random stream.

    Two streams built from the same seed yield identical draws. ``draws`` counts
    the sampling calls made so far.
    """

    def __init__(self, seed):
        seed = int(seed)
        if not 0 <= seed < _MAX_SEED:
            raise ParameterError("Invalid seed: {} - should be a 64-bit unsigned integer".format(seed))
        self.seed = seed
        self.draws = 0
        self.generator = torch.Generator()
        self.generator.manual_seed(seed)

    def __repr__(self):
        return "RngState(seed={}, draws={})".format(self.seed, self.draws)

    def spawn(self, name):
        """Child stream for a named stage (data, init, noise, search, attack, ...)."""
        digest = hashlib.sha256("{}:{}".format(self.seed, name).encode("utf-8")).digest()
        return RngState(int.from_bytes(digest[:8], "big"))

    def uniform(self, shape, low=0.0, high=1.0):
        self.draws += 1
        sample = torch.rand(shape, generator=self.generator, dtype=DTYPE)
        return sample * (high - low) + low

    def normal(self, shape, mean=0.0, std=1.0):
        self.draws += 1
        return torch.randn(shape, generator=self.generator, dtype=DTYPE) * std + mean

    def permutation(self, n):
        self.draws += 1
        return torch.randperm(n, generator=self.generator)

    def integers(self, low, high, shape):
        self.draws += 1
        return torch.randint(low, high, shape, generator=self.generator)


@dataclass(eq=False)
class DenseLayer:
    """One dense layer ``activation(weights @ x + bias)``.

    ``affine_norm`` layers are parameter-free (``weights is None``) and apply
    ``h -> 2h - 1`` elementwise on a vector of size ``width``.
    """

    weights: Optional[torch.Tensor]
    bias: Optional[torch.Tensor] = None
    activation: str = "identity"
    width: Optional[int] = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise StructuralError("Invalid activation: {} - should be one of {}".format(self.activation, ACTIVATIONS))
        if self.weights is None:
            if self.activation != "affine_norm" or self.width is None or self.bias is not None:
                raise StructuralError("Only affine_norm layers may be parameter-free and they need a width")
            return
        if self.activation == "affine_norm":
            raise StructuralError("affine_norm layers carry no weights")
        if self.weights.dim() != 2:
            raise StructuralError("Weights must be a matrix, got shape {}".format(tuple(self.weights.shape)))
        if self.bias is not None and self.bias.shape != (self.weights.shape[0],):
            raise StructuralError(
                "Bias shape {} does not match {} output units".format(tuple(self.bias.shape), self.weights.shape[0])
            )
        if not torch.isfinite(self.weights).all() or (self.bias is not None and not torch.isfinite(self.bias).all()):
            raise StructuralError("Layer parameters must be finite")
        self.width = self.weights.shape[0]

    @property
    def is_parametric(self):
        return self.weights is not None

    @property
    def in_dim(self):
        return self.width if self.weights is None else self.weights.shape[1]

    @property
    def out_dim(self):
        return self.width

    def to_dict(self):
        return {
            "activation": self.activation,
            "width": self.width,
            "weights": None if self.weights is None else self.weights.tolist(),
            "bias": None if self.bias is None else self.bias.tolist(),
        }

    @classmethod
    def from_dict(cls, obj):
        weights = obj.get("weights")
        bias = obj.get("bias")
        return cls(
            weights=None if weights is None else torch.tensor(weights, dtype=DTYPE),
            bias=None if bias is None else torch.tensor(bias, dtype=DTYPE),
            activation=obj["activation"],
            width=obj.get("width"),
        )


@dataclass(eq=False)
class DenseNet:
    layers: List[DenseLayer]
    input_dim: int

    def __post_init__(self):
        if self.input_dim <= 0:
            raise StructuralError("Invalid input_dim: {} - should be positive".format(self.input_dim))
        dim = self.input_dim
        for index, layer in enumerate(self.layers):
            if layer.in_dim != dim:
                raise StructuralError(
                    "Layer {} expects {} inputs but receives {}".format(index, layer.in_dim, dim)
                )
            dim = layer.out_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim if self.layers else self.input_dim

    @property
    def hidden_widths(self):
        """Widths of the parametric layers except the output layer."""
        widths = [layer.out_dim for layer in self.layers if layer.is_parametric]
        return widths[:-1]

    def slice(self, start, stop=None):
        layers = self.layers[start:stop]
        input_dim = self.layers[start].in_dim if layers else self.output_dim
        return DenseNet(list(layers), input_dim)

    def parameters(self):
        """Weights and biases in layer order; the layout every optimizer state follows."""
        params = []
        for layer in self.layers:
            if layer.is_parametric:
                params.append(layer.weights)
                if layer.bias is not None:
                    params.append(layer.bias)
        return params

    def with_parameters(self, params):
        params = list(params)
        layers = []
        cursor = 0
        for layer in self.layers:
            if not layer.is_parametric:
                layers.append(layer)
                continue
            weights = params[cursor]
            cursor += 1
            bias = None
            if layer.bias is not None:
                bias = params[cursor]
                cursor += 1
            if weights.shape != layer.weights.shape:
                raise StructuralError("Parameter shapes changed while rebuilding the network")
            layers.append(DenseLayer(weights=weights, bias=bias, activation=layer.activation))
        if cursor != len(params):
            raise StructuralError("Got {} parameters for a network holding {}".format(len(params), cursor))
        return DenseNet(layers, self.input_dim)

    def to_dict(self):
        return {"input_dim": self.input_dim, "layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, obj):
        return cls([DenseLayer.from_dict(layer) for layer in obj["layers"]], int(obj["input_dim"]))


@dataclass(eq=False)
class GradientSet:
    """Gradients mirroring a DenseNet; ``None`` where a layer has no such parameter."""

    weights: List[Optional[torch.Tensor]]
    biases: List[Optional[torch.Tensor]]
    inputs: Optional[torch.Tensor] = None

    def as_list(self):
        grads = []
        for weight, bias in zip(self.weights, self.biases):
            if weight is not None:
                grads.append(weight)
                if bias is not None:
                    grads.append(bias)
        return grads

    def add(self, other):
        def _sum(a, b):
            if a is None:
                return b
            if b is None:
                return a
            return a + b

        return GradientSet(
            weights=[_sum(a, b) for a, b in zip(self.weights, other.weights)],
            biases=[_sum(a, b) for a, b in zip(self.biases, other.biases)],
            inputs=_sum(self.inputs, other.inputs),
        )

    def is_finite(self):
        return all(bool(torch.isfinite(g).all()) for g in self.as_list())


def init_dense_layer(in_dim, out_dim, activation, rng, bias=False):
    """Uniform weights in [-1/sqrt(in_dim), 1/sqrt(in_dim)], zero bias."""
    bound = 1.0 / math.sqrt(in_dim)
    weights = rng.uniform((out_dim, in_dim), -bound, bound)
    return DenseLayer(
        weights=weights,
        bias=torch.zeros(out_dim, dtype=DTYPE) if bias else None,
        activation=activation,
    )


def init_dense_net(input_dim, widths, activations, rng, bias=False):
    if len(widths) != len(activations):
        raise StructuralError("`activations` must have the same length as `widths`.")
    layers = []
    dim = input_dim
    for width, activation in zip(widths, activations):
        layers.append(init_dense_layer(dim, width, activation, rng, bias=bias))
        dim = width
    return DenseNet(layers, input_dim)


def affine_norm_layer(width):
    return DenseLayer(weights=None, activation="affine_norm", width=width)


def _activate(z, activation):
    if activation == "sigmoid":
        return torch.sigmoid(z)
    if activation == "tanh":
        return torch.tanh(z)
    if activation == "relu":
        return torch.clamp_min(z, 0.0)
    if activation == "softmax":
        shifted = z - z.max(dim=-1, keepdim=True).values
        exp = torch.exp(shifted)
        return exp / exp.sum(dim=-1, keepdim=True)
    if activation == "affine_norm":
        return 2.0 * z - 1.0
    return z


def _activation_backward(grad, out, activation):
    """Pull ``grad`` (w.r.t. the layer output) back through the nonlinearity."""
    if activation == "sigmoid":
        return grad * out * (1.0 - out)
    if activation == "tanh":
        return grad * (1.0 - out * out)
    if activation == "relu":
        return grad * (out > 0).to(DTYPE)
    if activation == "softmax":
        return out * (grad - (grad * out).sum(dim=-1, keepdim=True))
    if activation == "affine_norm":
        return 2.0 * grad
    return grad


def _as_batch(x, dim, what="input"):
    if x.dim() == 1:
        x = x.unsqueeze(0)
    if x.dim() != 2 or x.shape[1] != dim:
        raise StructuralError("Invalid {} shape: {} - should end in {}".format(what, tuple(x.shape), dim))
    return x


def forward(net, x):
    """Activations of every layer, input first; the last entry is the network output."""
    squeeze = x.dim() == 1
    h = _as_batch(x.to(DTYPE), net.input_dim)
    activations = [h]
    for layer in net.layers:
        if layer.is_parametric:
            z = h @ layer.weights.T
            if layer.bias is not None:
                z = z + layer.bias
            h = _activate(z, layer.activation)
        else:
            h = _activate(h, layer.activation)
        activations.append(h)
    if squeeze:
        activations = [a.squeeze(0) for a in activations]
    return activations


def predict(net, x):
    return forward(net, x)[-1]


def backward(net, activations, upstream_gradient, preactivation=False):
    """Gradients of a scalar loss whose output-gradient is ``upstream_gradient``.

    With ``preactivation=True`` the upstream gradient is taken w.r.t. the last
    layer's pre-activation (as produced by the cross-entropy helpers) and the
    output nonlinearity is skipped.
    """
    if len(activations) != len(net.layers) + 1:
        raise StructuralError(
            "Got {} activations for a network of {} layers".format(len(activations), len(net.layers))
        )
    squeeze = upstream_gradient.dim() == 1
    acts = [_as_batch(a, a.shape[-1], "activation") for a in activations]
    grad = _as_batch(upstream_gradient.to(DTYPE), net.output_dim, "upstream gradient")
    if grad.shape[0] != acts[-1].shape[0]:
        raise StructuralError("Upstream gradient batch does not match the activations")

    weight_grads = [None] * len(net.layers)
    bias_grads = [None] * len(net.layers)
    for index in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[index]
        out, inp = acts[index + 1], acts[index]
        skip = preactivation and index == len(net.layers) - 1
        if not layer.is_parametric:
            grad = grad if skip else _activation_backward(grad, out, layer.activation)
            continue
        dz = grad if skip else _activation_backward(grad, out, layer.activation)
        weight_grads[index] = dz.T @ inp
        if layer.bias is not None:
            bias_grads[index] = dz.sum(dim=0)
        grad = dz @ layer.weights

    return GradientSet(weights=weight_grads, biases=bias_grads, inputs=grad.squeeze(0) if squeeze else grad)


def softmax_cross_entropy(probs, targets):
    """Per-row cross-entropy of softmax outputs and its gradient on the logits.

    ``targets`` holds class indices.
    """
    batch = _as_batch(probs, probs.shape[-1], "probabilities")
    targets = targets.reshape(-1).long()
    onehot = torch.zeros_like(batch)
    onehot[torch.arange(batch.shape[0]), targets] = 1.0
    picked = batch[torch.arange(batch.shape[0]), targets]
    loss = -torch.log(torch.clamp_min(picked, torch.finfo(DTYPE).tiny))
    grad = batch - onehot
    if probs.dim() == 1:
        return loss.squeeze(0), grad.squeeze(0)
    return loss, grad


def binary_cross_entropy(probs, targets):
    """Per-row log-loss of a single sigmoid output and its gradient on the logit."""
    p = probs.reshape(-1)
    y = targets.reshape(-1).to(DTYPE)
    tiny = torch.finfo(DTYPE).tiny
    loss = -(y * torch.log(torch.clamp_min(p, tiny)) + (1.0 - y) * torch.log(torch.clamp_min(1.0 - p, tiny)))
    return loss, (p - y).reshape(probs.shape)


def laplace_inverse_cdf(u, scale):
    """Map ``u`` in (-0.5, 0.5) to a Laplace(0, scale) variate."""
    magnitude = torch.clamp(2.0 * torch.abs(u), max=1.0 - 2.0 ** -53)
    return -scale * torch.sign(u) * torch.log1p(-magnitude)


def sample_laplace(rng, scale, count):
    if not scale > 0:
        raise ParameterError("Invalid Laplace scale: {} - should be > 0".format(scale))
    u = rng.uniform((int(count),), -0.5, 0.5)
    return laplace_inverse_cdf(u, scale)
