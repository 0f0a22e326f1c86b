# coding=utf-8
""" Objective perturbation for the reconstruction loss.

The squared reconstruction error of a sigmoid autoencoder is expanded on the
polynomial bases g(x, w) = sigmoid(sigmoid(w.x) w). Its coefficients fall into three
degree groups (a constant per sample, one vector per hidden unit, one scalar per
unordered unit pair). Laplace noise is drawn once per coefficient and the network
is then trained on the noisy objective, so the noise term depends on the weights
only and never on the data.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .errors import NumericError, ParameterError, StructuralError
from .modeling_dense import DTYPE, forward, backward, sample_laplace

logger = logging.getLogger(__name__)

ACCOUNTING_MODES = ("coordinate", "vector")


def sensitivity_bound(width, accounting="coordinate", dim=1):
    """4 (K + 1); the ``vector`` accounting charges it once per data coordinate."""
    if width < 1:
        raise ParameterError("Invalid width: {} - should be >= 1".format(width))
    if accounting not in ACCOUNTING_MODES:
        raise ParameterError("Invalid accounting: {} - should be one of {}".format(accounting, ACCOUNTING_MODES))
    bound = 4.0 * (width + 1)
    return bound * dim if accounting == "vector" else bound


def pair_count(width):
    return width * (width + 1) // 2


def pair_index(p, q, width):
    """Position of the unordered pair (p, q), p <= q, in row-major upper-triangle order."""
    if p > q:
        p, q = q, p
    return p * width - p * (p - 1) // 2 + (q - p)


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    sensitivity: float
    noise_scale: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError("Invalid epsilon: {} - should be > 0".format(self.epsilon))
        if not self.sensitivity > 0:
            raise ParameterError("Invalid sensitivity: {} - should be > 0".format(self.sensitivity))

    @classmethod
    def for_width(cls, width, epsilon, accounting="coordinate", dim=1):
        sensitivity = sensitivity_bound(width, accounting, dim)
        epsilon = float(epsilon)
        if not epsilon > 0:
            raise ParameterError("Invalid epsilon: {} - should be > 0".format(epsilon))
        noise_scale = 0.0 if math.isinf(epsilon) else sensitivity / epsilon
        return cls(epsilon=epsilon, sensitivity=sensitivity, noise_scale=noise_scale)

    @property
    def is_private(self):
        return self.noise_scale > 0

    def to_dict(self):
        return {
            "epsilon": "inf" if math.isinf(self.epsilon) else self.epsilon,
            "sensitivity": self.sensitivity,
            "noise_scale": self.noise_scale,
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(float(obj["epsilon"]), float(obj["sensitivity"]), float(obj["noise_scale"]))


@dataclass(frozen=True, eq=False)
class CoefficientGroups:
    """Aggregated polynomial coefficients of the reconstruction loss.

    ``c0_by_coordinate[j]`` is the sum of squares of data column j; ``c0`` is its
    total. Every row of ``c1`` equals -2 times the column sums. ``c2`` holds the
    sample count once per unordered unit pair.
    """

    c0: float
    c0_by_coordinate: torch.Tensor
    c1: torch.Tensor
    c2: torch.Tensor
    count: int

    @property
    def width(self):
        return self.c1.shape[0]

    @property
    def dim(self):
        return self.c1.shape[1]

    def coordinate_slice(self, j):
        """Every coefficient attached to data column j, flattened."""
        return torch.cat([self.c0_by_coordinate[j:j + 1], self.c1[:, j], self.c2])

    def flatten(self):
        return torch.cat([torch.tensor([self.c0], dtype=DTYPE), self.c1.reshape(-1), self.c2])


def _features(data):
    features = data.features if hasattr(data, "features") else torch.as_tensor(data, dtype=DTYPE)
    if features.dim() != 2:
        raise StructuralError("Expected a feature matrix, got shape {}".format(tuple(features.shape)))
    return features.to(DTYPE)


def aggregate_coefficients(dataset, width):
    features = _features(dataset)
    if features.shape[0] == 0:
        raise ParameterError("Cannot aggregate coefficients of an empty dataset")
    if width < 1:
        raise ParameterError("Invalid width: {} - should be >= 1".format(width))
    if (features.abs() > 1.0).any():
        raise ParameterError("Feature entries must lie in [-1, 1]")
    count = features.shape[0]
    by_coordinate = (features * features).sum(dim=0)
    column_sums = features.sum(dim=0)
    c1 = (-2.0 * column_sums).unsqueeze(0).repeat(width, 1)
    c2 = torch.full((pair_count(width),), float(count), dtype=DTYPE)
    return CoefficientGroups(
        c0=float(by_coordinate.sum()), c0_by_coordinate=by_coordinate, c1=c1, c2=c2, count=count
    )


@dataclass(frozen=True, eq=False)
class NoisyCoefficients:
    """Laplace draws of one training run; fixed for the whole run."""

    eta0: float
    eta1: torch.Tensor
    eta2: torch.Tensor
    budget: PrivacyBudget
    seed: Optional[int] = None

    def __post_init__(self):
        width = self.eta1.shape[0]
        if self.eta1.dim() != 2 or self.eta2.shape != (pair_count(width),):
            raise StructuralError(
                "Noise groups do not agree: eta1 {} with {} pair draws".format(tuple(self.eta1.shape), self.eta2.numel())
            )

    @property
    def width(self):
        return self.eta1.shape[0]

    @property
    def dim(self):
        return self.eta1.shape[1]

    @property
    def draw_count(self):
        return 1 + self.eta1.numel() + self.eta2.numel()

    def is_zero(self):
        return self.eta0 == 0.0 and not bool(self.eta1.any()) and not bool(self.eta2.any())

    @classmethod
    def zeros(cls, width, dim, budget=None):
        if budget is None:
            budget = PrivacyBudget.for_width(width, float("inf"))
        return cls(
            eta0=0.0,
            eta1=torch.zeros((width, dim), dtype=DTYPE),
            eta2=torch.zeros(pair_count(width), dtype=DTYPE),
            budget=budget,
        )

    def to_dict(self):
        return {
            "budget": self.budget.to_dict(),
            "seed": self.seed,
            "width": self.width,
            "dim": self.dim,
            "eta0": self.eta0,
            "eta1": self.eta1.tolist(),
            "eta2": self.eta2.tolist(),
        }

    @classmethod
    def from_dict(cls, obj):
        eta1 = torch.tensor(obj["eta1"], dtype=DTYPE).reshape(int(obj["width"]), int(obj["dim"]))
        return cls(
            eta0=float(obj["eta0"]),
            eta1=eta1,
            eta2=torch.tensor(obj["eta2"], dtype=DTYPE).reshape(-1),
            budget=PrivacyBudget.from_dict(obj["budget"]),
            seed=obj.get("seed"),
        )


def perturb(groups, budget, rng):
    """Draw one Laplace(noise_scale) variate per scalar coefficient.

    Only the shapes of ``groups`` are read. With an infinite budget every draw is 0.
    """
    if not budget.is_private:
        logger.info("Infinite privacy budget, coefficients are left unperturbed")
        return NoisyCoefficients.zeros(groups.width, groups.dim, budget)
    width, dim = groups.width, groups.dim
    draws = sample_laplace(rng, budget.noise_scale, 1 + width * dim + pair_count(width))
    noisy = NoisyCoefficients(
        eta0=float(draws[0]),
        eta1=draws[1:1 + width * dim].reshape(width, dim).clone(),
        eta2=draws[1 + width * dim:].clone(),
        budget=budget,
        seed=rng.seed,
    )
    logger.info(
        "Perturbed %d coefficients at scale %.6g (epsilon=%s, sensitivity=%.6g)",
        noisy.draw_count, budget.noise_scale, budget.epsilon, budget.sensitivity,
    )
    return noisy


def basis_g(x, w):
    """sigmoid(sigmoid(w.x) * w), elementwise; ``w`` may hold one unit per row."""
    x = torch.as_tensor(x, dtype=DTYPE)
    w = torch.as_tensor(w, dtype=DTYPE)
    if w.shape[-1] != x.shape[-1]:
        raise StructuralError("Basis input {} does not match weights {}".format(tuple(x.shape), tuple(w.shape)))
    gate = torch.sigmoid(w @ x)
    return torch.sigmoid(gate.unsqueeze(-1) * w)


def noise_term(weights, noisy):
    """Noise coupling of the first encoder layer and its gradient on ``weights``.

    eta0 + sum_p eta1_p . g(0, w_p) + sum_{p<=q} eta2_pq g(0, w_p) . g(0, w_q),
    with w_p the rows of ``weights`` (units x inputs) and g(0, w) = sigmoid(w / 2).
    """
    units, dim = weights.shape
    if units > noisy.width or dim != noisy.dim:
        raise StructuralError(
            "First layer {} does not fit noise drawn for width {} and dimension {}".format(
                tuple(weights.shape), noisy.width, noisy.dim
            )
        )
    basis = torch.sigmoid(0.5 * weights)
    rows, cols = torch.triu_indices(units, units)
    upper = torch.zeros((units, units), dtype=DTYPE)
    upper[rows, cols] = noisy.eta2[[pair_index(int(p), int(q), noisy.width) for p, q in zip(rows, cols)]]
    eta1 = noisy.eta1[:units]

    gram = basis @ basis.T
    value = noisy.eta0 + float((eta1 * basis).sum()) + float((upper * gram).sum())
    grad_basis = eta1 + (upper + upper.T) @ basis
    grad_weights = grad_basis * basis * (1.0 - basis) * 0.5
    return value, grad_weights


def _first_parametric(net):
    for index, layer in enumerate(net.layers):
        if layer.is_parametric:
            return index
    raise StructuralError("Network has no parametric layer")


REDUCTIONS = ("mean", "sum")


def plain_loss(net, batch, reduction="mean"):
    """Squared reconstruction error of a batch and its GradientSet.

    ``reduction="mean"`` averages the per-row errors, ``"sum"`` adds them up.
    """
    if reduction not in REDUCTIONS:
        raise ParameterError("Invalid reduction: {} - should be one of {}".format(reduction, REDUCTIONS))
    batch = _features(batch)
    activations = forward(net, batch)
    error = activations[-1] - batch
    scale = 1.0 / batch.shape[0] if reduction == "mean" else 1.0
    loss = float((error * error).sum()) * scale
    if not math.isfinite(loss):
        raise NumericError("Reconstruction loss is not finite", term="reconstruction")
    return loss, backward(net, activations, (2.0 * scale) * error)


def perturbed_loss(net, batch, noisy, noise_weight=1.0, reduction="mean"):
    """Reconstruction loss plus ``noise_weight`` times the noise coupling term.

    Training splits the noise term over the batches of an epoch (``1 / batches``
    each for the mean reduction, ``len(batch) / N`` for the sum) so that one
    epoch accumulates exactly one copy of it.
    """
    loss, grads = plain_loss(net, batch, reduction)
    index = _first_parametric(net)
    value, grad_weights = noise_term(net.layers[index].weights, noisy)
    if not math.isfinite(value):
        raise NumericError("Noise coupling term is not finite", term="noise")
    weights = list(grads.weights)
    weights[index] = weights[index] + noise_weight * grad_weights
    grads = type(grads)(weights=weights, biases=grads.biases, inputs=grads.inputs)
    return loss + noise_weight * value, grads


def check_neighbors(features_a, features_b):
    """Raise unless the two feature matrices differ in at most one row."""
    a, b = _features(features_a), _features(features_b)
    if a.shape != b.shape:
        raise ParameterError("Neighbor datasets must have equal shapes, got {} and {}".format(
            tuple(a.shape), tuple(b.shape)))
    differing = int((a != b).any(dim=1).sum())
    if differing > 1:
        raise ParameterError("Datasets differ in {} rows - neighbors differ in at most one".format(differing))
    return a, b


def coordinate_sensitivity_oracle(features_a, features_b, width):
    """Largest per-coordinate L1 distance between the coefficients of two neighbors."""
    a, b = check_neighbors(features_a, features_b)
    groups_a = aggregate_coefficients(a, width)
    groups_b = aggregate_coefficients(b, width)
    return max(
        float((groups_a.coordinate_slice(j) - groups_b.coordinate_slice(j)).abs().sum())
        for j in range(groups_a.dim)
    )


def empirical_privacy_ratio(dataset_a, dataset_b, budget, trials, bins, rng, min_count=50):
    """Monte-Carlo estimate of the largest output-probability ratio of the noisy c0.

    Both noisy samples are histogrammed over shared quantile bins of the pooled
    draws; only bins holding at least ``min_count`` draws on both sides count.
    """
    a, b = check_neighbors(dataset_a, dataset_b)
    if trials < 10 ** 4:
        raise ParameterError("Invalid trials: {} - should be >= 10000".format(trials))
    if not budget.is_private:
        raise ParameterError("An infinite privacy budget adds no noise to compare")
    c0_a = float((a * a).sum())
    c0_b = float((b * b).sum())
    noisy_a = c0_a + sample_laplace(rng, budget.noise_scale, trials).numpy()
    noisy_b = c0_b + sample_laplace(rng, budget.noise_scale, trials).numpy()

    edges = np.quantile(np.concatenate([noisy_a, noisy_b]), np.linspace(0.0, 1.0, bins + 1))
    edges = np.unique(edges)
    counts_a, _ = np.histogram(noisy_a, bins=edges)
    counts_b, _ = np.histogram(noisy_b, bins=edges)
    usable = (counts_a >= min_count) & (counts_b >= min_count)
    if not usable.any():
        raise ParameterError("No histogram bin holds {} draws from both datasets".format(min_count))
    ratios = counts_a[usable] / counts_b[usable]
    return float(np.max(np.maximum(ratios, 1.0 / ratios)))
