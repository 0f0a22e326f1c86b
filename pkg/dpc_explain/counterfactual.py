# coding=utf-8
""" Counterfactual search from class prototypes.

The search perturbs a target-class prototype in latent space and decodes it:
nothing here reads the training data, only prototypes, the decoder and the
target model. A data-space gradient baseline and a Monte-Carlo bias probe for
noisy prototypes live alongside.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import torch

from .errors import NumericError, ParameterError
from .modeling_autoencoder import prototype_for
from .modeling_dense import DTYPE, backward, forward, predict, sample_laplace, softmax_cross_entropy

logger = logging.getLogger(__name__)

# (alpha, beta, gamma) per data family
SEARCH_PRESETS = {
    "mixed": (1.0, 0.5, 0.1),
    "image": (1.0, 0.2, 20.0),
    "binary": (1.0, 0.5, 10.0),
}


@dataclass
class SearchConfig:
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.1
    iterations: int = 500
    step_size: float = 0.05
    target_class: Optional[int] = None
    init_noise: float = 0.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ParameterError("Invalid loss weights: ({}, {}, {}) - should be >= 0".format(
                self.alpha, self.beta, self.gamma))
        if max(self.alpha, self.beta, self.gamma) <= 0:
            raise ParameterError("At least one of alpha, beta, gamma must be positive")
        if self.iterations < 0:
            raise ParameterError("Invalid iterations: {} - should be >= 0".format(self.iterations))
        if not self.step_size > 0:
            raise ParameterError("Invalid step size: {} - should be > 0".format(self.step_size))
        if self.init_noise < 0:
            raise ParameterError("Invalid init noise: {} - should be >= 0".format(self.init_noise))

    @classmethod
    def from_preset(cls, name, **kwargs):
        if name not in SEARCH_PRESETS:
            raise ParameterError("Invalid preset: {} - should be one of {}".format(name, sorted(SEARCH_PRESETS)))
        alpha, beta, gamma = SEARCH_PRESETS[name]
        return cls(alpha=alpha, beta=beta, gamma=gamma, **kwargs)

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(eq=False)
class CounterfactualResult:
    """``sample`` is the decoding of ``prototype + delta`` (the query plus ``delta``
    for the data-space baseline, where ``prototype`` is None)."""

    delta: torch.Tensor
    sample: torch.Tensor
    target_class: int
    predicted_class: int
    flipped: bool
    loss_trace: List[float] = field(default_factory=list)
    best_loss: float = float("nan")
    initial_loss: float = float("nan")
    prototype: Optional[torch.Tensor] = None

    @property
    def converged(self):
        return self.best_loss <= self.initial_loss

    def recompute_sample(self, decoder):
        return predict(decoder, self.prototype + self.delta)


def _norm_and_grad(v):
    norm = torch.linalg.vector_norm(v, dim=-1)
    safe = torch.where(norm > 0, norm, torch.ones_like(norm))
    grad = torch.where((norm > 0).unsqueeze(-1), v / safe.unsqueeze(-1), torch.zeros_like(v))
    return norm, grad


def counterfactual_loss(delta, prototypes, queries, targets, target_model, decoder, config):
    """Per-row L_cs and its gradient on ``delta``.

    L_cs = alpha * CE(f(dec(rho + delta)), target) + beta * ||dec(rho + delta) - q||
           + gamma * ||delta||.
    Returns ``(loss, grad, sample, probs)``, all batched.
    """
    decoder_acts = forward(decoder, prototypes + delta)
    sample = decoder_acts[-1]
    model_acts = forward(target_model, sample)
    probs = model_acts[-1]

    prediction_loss, logit_grad = softmax_cross_entropy(probs, targets)
    grad_sample = backward(target_model, model_acts, config.alpha * logit_grad, preactivation=True).inputs
    distance, distance_grad = _norm_and_grad(sample - queries)
    grad_sample = grad_sample + config.beta * distance_grad
    grad_latent = backward(decoder, decoder_acts, grad_sample).inputs
    magnitude, magnitude_grad = _norm_and_grad(delta)

    loss = config.alpha * prediction_loss + config.beta * distance + config.gamma * magnitude
    return loss, grad_latent + config.gamma * magnitude_grad, sample, probs


def choose_targets(prototypes, queries, target_model, encoder, target_class=None):
    """Target class per query: ``target_class`` if given, otherwise the nearest
    prototype (latent L2) among classes other than the current prediction."""
    n = queries.shape[0]
    if target_class is not None:
        prototype_for(prototypes, target_class)
        return torch.full((n,), int(target_class), dtype=torch.long)
    predicted = torch.argmax(predict(target_model, queries), dim=-1)
    latent = predict(encoder, queries)
    class_ids = torch.tensor([p.class_id for p in prototypes], dtype=torch.long)
    vectors = torch.stack([p.vector for p in prototypes])
    distances = torch.cdist(latent, vectors)
    distances = torch.where(class_ids.unsqueeze(0) == predicted.unsqueeze(1), torch.full_like(distances, math.inf),
                            distances)
    if torch.isinf(distances.min(dim=1).values).any():
        raise ParameterError("No prototype of a class other than the predicted one")
    return class_ids[torch.argmin(distances, dim=1)]


def search_counterfactuals(prototypes, queries, target_model, autoencoder, config, rng):
    """Batched gradient-descent search, one independent ``delta`` per query row.

    Every iterate is scored and the best-loss one is kept. The bare prototype
    (``delta = 0``) is scored first, so a jittered start (``init_noise > 0``)
    can never return something worse than it.
    """
    queries = torch.as_tensor(queries, dtype=DTYPE)
    if queries.dim() == 1:
        queries = queries.unsqueeze(0)
    decoder = autoencoder.decoder
    targets = choose_targets(prototypes, queries, target_model, autoencoder.encoder, config.target_class)
    anchors = torch.stack([prototype_for(prototypes, int(t)).vector for t in targets])

    def score(delta, iteration):
        loss, grad, _, _ = counterfactual_loss(delta, anchors, queries, targets, target_model, decoder, config)
        if not torch.isfinite(loss).all() or not torch.isfinite(grad).all():
            raise NumericError("Counterfactual loss is not finite at iteration {}".format(iteration), term="search")
        return loss, grad

    # the bare prototype is always a candidate, jittered start or not
    delta = torch.zeros_like(anchors)
    loss, grad = score(delta, 0)
    initial_loss = loss.clone()
    best_loss = loss.clone()
    best_delta = delta.clone()
    traces = [loss]
    if config.init_noise > 0:
        delta = rng.normal(tuple(anchors.shape), std=config.init_noise)
        loss, grad = score(delta, 0)
        traces.append(loss)
    for iteration in range(1, config.iterations + 1):
        improved = loss < best_loss
        best_loss = torch.where(improved, loss, best_loss)
        best_delta = torch.where(improved.unsqueeze(1), delta, best_delta)
        delta = delta - config.step_size * grad
        loss, grad = score(delta, iteration)
        traces.append(loss)
    improved = loss < best_loss
    best_loss = torch.where(improved, loss, best_loss)
    best_delta = torch.where(improved.unsqueeze(1), delta, best_delta)

    samples = predict(decoder, anchors + best_delta)
    predicted = torch.argmax(predict(target_model, samples), dim=-1)
    traces = torch.stack(traces, dim=1)
    results = []
    for row in range(queries.shape[0]):
        results.append(CounterfactualResult(
            delta=best_delta[row],
            sample=samples[row],
            target_class=int(targets[row]),
            predicted_class=int(predicted[row]),
            flipped=bool(predicted[row] == targets[row]),
            loss_trace=traces[row].tolist(),
            best_loss=float(best_loss[row]),
            initial_loss=float(initial_loss[row]),
            prototype=anchors[row],
        ))
    flipped = sum(r.flipped for r in results)
    logger.debug("Searched %d counterfactuals, %d flipped", len(results), flipped)
    return results


def search_counterfactual(prototypes, query, target_model, autoencoder, config, rng):
    query = torch.as_tensor(query, dtype=DTYPE).reshape(1, -1)
    return search_counterfactuals(prototypes, query, target_model, autoencoder, config, rng)[0]


def baseline_counterfactuals(queries, target_model, steps=200, step_size=0.05, target_class=None):
    """Gradient ascent on log p_target directly in data space, clamped to [-1, 1].

    Without a target the runner-up class of the query is used. A row stops
    moving once the model predicts its target.
    """
    if steps < 0:
        raise ParameterError("Invalid steps: {} - should be >= 0".format(steps))
    if not step_size > 0:
        raise ParameterError("Invalid step size: {} - should be > 0".format(step_size))
    queries = torch.as_tensor(queries, dtype=DTYPE)
    if queries.dim() == 1:
        queries = queries.unsqueeze(0)
    probs = predict(target_model, queries)
    if target_class is not None:
        targets = torch.full((queries.shape[0],), int(target_class), dtype=torch.long)
    else:
        targets = torch.topk(probs, 2, dim=-1).indices[:, 1]

    x = queries.clone()
    traces = []
    for step in range(steps + 1):
        activations = forward(target_model, x)
        loss, logit_grad = softmax_cross_entropy(activations[-1], targets)
        if not torch.isfinite(loss).all():
            raise NumericError("Baseline loss is not finite at step {}".format(step), term="baseline")
        traces.append(loss)
        done = torch.argmax(activations[-1], dim=-1) == targets
        if step == steps or bool(done.all()):
            break
        ascent = -backward(target_model, activations, logit_grad, preactivation=True).inputs
        moved = torch.clamp(x + step_size * ascent, -1.0, 1.0)
        x = torch.where(done.unsqueeze(1), x, moved)

    predicted = torch.argmax(predict(target_model, x), dim=-1)
    traces = torch.stack(traces, dim=1)
    return [
        CounterfactualResult(
            delta=x[row] - queries[row],
            sample=x[row],
            target_class=int(targets[row]),
            predicted_class=int(predicted[row]),
            flipped=bool(predicted[row] == targets[row]),
            loss_trace=traces[row].tolist(),
            best_loss=float(traces[row].min()),
            initial_loss=float(traces[row, 0]),
        )
        for row in range(queries.shape[0])
    ]


def baseline_counterfactual(query, target_model, steps=200, step_size=0.05, target_class=None):
    query = torch.as_tensor(query, dtype=DTYPE).reshape(1, -1)
    return baseline_counterfactuals(query, target_model, steps, step_size, target_class)[0]


@dataclass
class ProbeResult:
    deviation: float
    standard_error: float
    trials: int


def _affine_toy_search(anchor, query, steps, step_size, pull, shrink):
    # gradient descent on pull/2 ||anchor + d - q||^2 + shrink/2 ||d||^2 with an identity decoder
    delta = torch.zeros_like(anchor)
    for _ in range(steps):
        delta = delta - step_size * (pull * (anchor + delta - query) + shrink * delta)
    return anchor + delta


def unbiasedness_probe(toy_dim, noise_scale, trials, rng, steps=20, step_size=0.1, pull=1.0, shrink=0.5):
    """Sup-norm gap between the mean search output from Laplace-noised prototypes
    and the noise-free output, with the largest per-coordinate standard error."""
    if trials < 10 ** 4:
        raise ParameterError("Invalid trials: {} - should be >= 10000".format(trials))
    if noise_scale < 0:
        raise ParameterError("Invalid noise scale: {} - should be >= 0".format(noise_scale))
    anchor = rng.uniform((toy_dim,), -1.0, 1.0)
    query = rng.uniform((toy_dim,), -1.0, 1.0)
    clean = _affine_toy_search(anchor, query, steps, step_size, pull, shrink)
    if noise_scale == 0:
        return ProbeResult(deviation=0.0, standard_error=0.0, trials=trials)
    noise = sample_laplace(rng, noise_scale, trials * toy_dim).reshape(trials, toy_dim)
    noisy = _affine_toy_search(anchor + noise, query, steps, step_size, pull, shrink)
    deviation = float((noisy.mean(dim=0) - clean).abs().max())
    standard_error = float((noisy.std(dim=0) / math.sqrt(trials)).max())
    return ProbeResult(deviation=deviation, standard_error=standard_error, trials=trials)
