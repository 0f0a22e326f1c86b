import pytest
import torch

from dpc_explain.errors import NumericError, ParameterError
from dpc_explain.modeling_dense import DTYPE
from dpc_explain.optimization import AdagradState, AdamState, OptimizerConfig, adagrad_step, adam_step


def _scalar(value):
    return [torch.tensor([value], dtype=DTYPE)]


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = [torch.tensor([0.3, -1.2], dtype=DTYPE)]
        new_params, state = adam_step(params, [torch.zeros(2, dtype=DTYPE)], AdamState.for_params(params), 0.1)
        assert torch.equal(new_params[0], params[0])
        assert state.step == 1

    def test_first_step_moves_by_lr(self):
        params = _scalar(0.0)
        new_params, _ = adam_step(params, _scalar(1.0), AdamState.for_params(params), 0.1)
        assert abs(float(new_params[0]) + 0.1) < 1e-6

    def test_second_moment_accumulates(self):
        params = _scalar(0.0)
        state = AdamState.for_params(params)
        params, state = adam_step(params, _scalar(1.0), state, 0.1)
        first = float(state.exp_avg_sq[0])
        params, state = adam_step(params, _scalar(1.0), state, 0.1)
        assert state.step == 2
        assert float(state.exp_avg_sq[0]) > first

    def test_rejects_non_finite_gradient(self):
        params = _scalar(0.0)
        with pytest.raises(NumericError):
            adam_step(params, _scalar(float("inf")), AdamState.for_params(params), 0.1)

    def test_rejects_bad_learning_rate(self):
        params = _scalar(0.0)
        with pytest.raises(ParameterError):
            adam_step(params, _scalar(1.0), AdamState.for_params(params), 0.0)


class TestAdagrad:
    def test_zero_gradient_keeps_params(self):
        params = _scalar(0.7)
        new_params, _ = adagrad_step(params, _scalar(0.0), AdagradState.for_params(params), 0.5)
        assert torch.equal(new_params[0], params[0])

    def test_first_step_closed_form(self):
        params = _scalar(0.0)
        new_params, _ = adagrad_step(params, _scalar(2.0), AdagradState.for_params(params), 0.5)
        assert abs(float(new_params[0]) + 0.5) < 1e-9

    def test_decay_is_stored(self):
        params = _scalar(0.0)
        _, state = adagrad_step(params, _scalar(1.0), AdagradState.for_params(params), 1e-2, decay=1e-7)
        assert state.lr == 1e-2
        assert state.lr_decay == 1e-7
        assert state.step == 1

    def test_shape_mismatch(self):
        params = _scalar(0.0)
        with pytest.raises(ParameterError):
            adagrad_step(params, [torch.zeros(2, dtype=DTYPE)], AdagradState.for_params(params), 0.1)


def test_optimizer_config_dispatch():
    params = _scalar(0.0)
    config = OptimizerConfig(name="adagrad", lr=0.5)
    new_params, state = config.step(params, _scalar(2.0), config.init_state(params))
    assert isinstance(state, AdagradState)
    assert abs(float(new_params[0]) + 0.5) < 1e-9
    with pytest.raises(ParameterError):
        OptimizerConfig(name="sgd")
