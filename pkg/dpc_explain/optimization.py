# coding=utf-8
"""Optimizers for DenseNet parameter lists.

The steps are functional: they take the parameter list, its gradients and the
optimizer state, and return new parameters with the advanced state. A state is
owned by a single trainer.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List

import torch

from .errors import NumericError, ParameterError

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class AdamState:
    step: int = 0
    # Exponential moving averages of gradient values and squared gradient values
    exp_avg: List[torch.Tensor] = field(default_factory=list)
    exp_avg_sq: List[torch.Tensor] = field(default_factory=list)

    @classmethod
    def for_params(cls, params):
        return cls(
            step=0,
            exp_avg=[torch.zeros_like(p) for p in params],
            exp_avg_sq=[torch.zeros_like(p) for p in params],
        )


@dataclass(eq=False)
class AdagradState:
    step: int = 0
    lr: float = 1e-2
    lr_decay: float = 0.0
    sum_sq: List[torch.Tensor] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-2, lr_decay=0.0):
        return cls(step=0, lr=lr, lr_decay=lr_decay, sum_sq=[torch.zeros_like(p) for p in params])


def _check_step_inputs(params, grads, state_tensors):
    if len(params) != len(grads) or len(params) != len(state_tensors):
        raise ParameterError(
            "Invalid optimizer inputs: {} params, {} grads, {} state slots".format(
                len(params), len(grads), len(state_tensors)
            )
        )
    for index, (p, g, s) in enumerate(zip(params, grads, state_tensors)):
        if p.shape != g.shape or p.shape != s.shape:
            raise ParameterError("Shape mismatch for parameter {}: {} vs {}".format(index, p.shape, g.shape))
        if not torch.isfinite(g).all():
            raise NumericError("Non-finite gradient for parameter {}, step rejected".format(index), term="gradient")


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps_hat=1e-8):
    """One Adam update with bias correction."""
    if not lr > 0.0:
        raise ParameterError("Invalid learning rate: {} - should be > 0.0".format(lr))
    if not 0.0 <= beta1 < 1.0:
        raise ParameterError("Invalid beta parameter: {} - should be in [0.0, 1.0[".format(beta1))
    if not 0.0 <= beta2 < 1.0:
        raise ParameterError("Invalid beta parameter: {} - should be in [0.0, 1.0[".format(beta2))
    if not 0.0 <= eps_hat:
        raise ParameterError("Invalid epsilon value: {} - should be >= 0.0".format(eps_hat))
    _check_step_inputs(params, grads, state.exp_avg)

    step = state.step + 1
    bias_correction1 = 1.0 - beta1 ** step
    bias_correction2 = 1.0 - beta2 ** step
    step_size = lr * math.sqrt(bias_correction2) / bias_correction1

    new_params, exp_avg, exp_avg_sq = [], [], []
    for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        denom = torch.sqrt(v) + eps_hat * math.sqrt(bias_correction2)
        new_params.append(p - step_size * m / denom)
        exp_avg.append(m)
        exp_avg_sq.append(v)
    return new_params, AdamState(step=step, exp_avg=exp_avg, exp_avg_sq=exp_avg_sq)


def adagrad_step(params, grads, state, lr, decay=0.0, eps=1e-10):
    """One Adagrad update; the learning rate decays as lr / (1 + (step - 1) * decay)."""
    if not lr > 0.0:
        raise ParameterError("Invalid learning rate: {} - should be > 0.0".format(lr))
    if not decay >= 0.0:
        raise ParameterError("Invalid learning rate decay: {} - should be >= 0.0".format(decay))
    _check_step_inputs(params, grads, state.sum_sq)

    step = state.step + 1
    clr = lr / (1.0 + (step - 1) * decay)
    new_params, sum_sq = [], []
    for p, g, s in zip(params, grads, state.sum_sq):
        s = s + g * g
        new_params.append(p - clr * g / (torch.sqrt(s) + eps))
        sum_sq.append(s)
    return new_params, AdagradState(step=step, lr=lr, lr_decay=decay, sum_sq=sum_sq)


@dataclass
class OptimizerConfig:
    """Optimizer choice for the training loops: ``adam`` or ``adagrad``."""

    name: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    lr_decay: float = 0.0

    def __post_init__(self):
        if self.name not in ("adam", "adagrad"):
            raise ParameterError("Invalid optimizer: {} - should be 'adam' or 'adagrad'".format(self.name))

    def init_state(self, params):
        if self.name == "adam":
            return AdamState.for_params(params)
        return AdagradState.for_params(params, lr=self.lr, lr_decay=self.lr_decay)

    def step(self, params, grads, state):
        if self.name == "adam":
            return adam_step(params, grads, state, self.lr, self.beta1, self.beta2, self.eps_hat)
        return adagrad_step(params, grads, state, self.lr, self.lr_decay)
