import math

import numpy as np
import pytest
import torch

from dpc_explain.errors import NumericError, ParameterError, StructuralError
from dpc_explain.functional_mechanism import (
    NoisyCoefficients,
    PrivacyBudget,
    aggregate_coefficients,
    basis_g,
    coordinate_sensitivity_oracle,
    empirical_privacy_ratio,
    noise_term,
    pair_index,
    perturb,
    perturbed_loss,
    plain_loss,
    sensitivity_bound,
)
from dpc_explain.modeling_autoencoder import AutoencoderSpec, fit_reconstruction, noise_weight
from dpc_explain.modeling_dense import DTYPE, RngState
from dpc_explain.utils_data import synth_blobs


def _sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def _noise_term_oracle(weights, noisy):
    rows = weights.tolist()
    g = [[_sigmoid(0.5 * w) for w in row] for row in rows]
    eta1 = noisy.eta1.tolist()
    eta2 = noisy.eta2.tolist()
    value = noisy.eta0
    for p in range(len(rows)):
        value += sum(e * b for e, b in zip(eta1[p], g[p]))
        for q in range(p, len(rows)):
            value += eta2[pair_index(p, q, noisy.width)] * sum(a * b for a, b in zip(g[p], g[q]))
    return value


def _noisy(width, dim, seed, scale=1.0):
    groups = aggregate_coefficients(torch.zeros((1, dim), dtype=DTYPE), width)
    return perturb(groups, PrivacyBudget(1.0, scale, scale), RngState(seed))


class TestBasis:
    def test_zero_input(self):
        w = torch.tensor([0.4, -2.0, 3.0], dtype=DTYPE)
        np.testing.assert_allclose(basis_g(torch.zeros(3, dtype=DTYPE), w).numpy(), torch.sigmoid(0.5 * w).numpy())

    def test_zero_weights(self):
        out = basis_g(torch.tensor([0.3, -0.1], dtype=DTYPE), torch.zeros(2, dtype=DTYPE))
        np.testing.assert_array_equal(out.numpy(), [0.5, 0.5])

    def test_scalar_oracle(self):
        rng = RngState(7)
        x, w = rng.uniform((5,), -1, 1), rng.normal((5,))
        gate = _sigmoid(sum(a * b for a, b in zip(w.tolist(), x.tolist())))
        expected = [_sigmoid(gate * wj) for wj in w.tolist()]
        np.testing.assert_allclose(basis_g(x, w).numpy(), expected, rtol=0, atol=1e-14)


class TestSensitivity:
    def test_values(self):
        assert sensitivity_bound(16) == 68
        assert sensitivity_bound(1) == 8
        assert sensitivity_bound(2, accounting="vector", dim=5) == 60

    def test_invalid_width(self):
        with pytest.raises(ParameterError):
            sensitivity_bound(0)

    def test_budget_scale(self):
        budget = PrivacyBudget.for_width(4, 0.5)
        assert budget.sensitivity == 20
        assert budget.noise_scale == 20 / 0.5
        assert PrivacyBudget.for_width(4, float("inf")).noise_scale == 0.0
        with pytest.raises(ParameterError):
            PrivacyBudget.for_width(4, 0.0)

    def test_neighbor_oracle_never_exceeds_bound(self):
        rng = RngState(1)
        for trial in range(10 ** 4):
            n = int(rng.integers(1, 9, (1,)))
            d = int(rng.integers(1, 5, (1,)))
            width = int(rng.integers(1, 5, (1,)))
            a = rng.uniform((n, d), -1.0, 1.0)
            if trial % 10 == 0:
                a = torch.sign(a)
            b = a.clone()
            row = int(rng.integers(0, n, (1,)))
            b[row] = -a[row] if trial % 2 == 0 else rng.uniform((d,), -1.0, 1.0)
            assert coordinate_sensitivity_oracle(a, b, width) <= sensitivity_bound(width) + 1e-12

    def test_oracle_rejects_non_neighbors(self):
        a = torch.zeros((3, 2), dtype=DTYPE)
        with pytest.raises(ParameterError):
            coordinate_sensitivity_oracle(a, torch.ones((3, 2), dtype=DTYPE), 2)


class TestAggregate:
    def test_single_zero_sample(self):
        groups = aggregate_coefficients(torch.zeros((1, 3), dtype=DTYPE), 2)
        assert groups.c0 == 0.0
        assert not bool(groups.c1.any())
        assert groups.c2.tolist() == [1.0, 1.0, 1.0]

    def test_symmetric_pair(self):
        x = torch.tensor([0.5, -0.25, 1.0], dtype=DTYPE)
        groups = aggregate_coefficients(torch.stack([x, -x]), 3)
        assert not bool(groups.c1.any())
        assert groups.c0 == pytest.approx(2 * float(x @ x), abs=1e-15)

    def test_hand_computed_fixture(self):
        data = torch.tensor([[0.5, -1.0], [0.25, 0.0], [-1.0, 0.5]], dtype=DTYPE)
        groups = aggregate_coefficients(data, 2)
        assert groups.c0 == pytest.approx(0.25 + 1.0 + 0.0625 + 0.0 + 1.0 + 0.25)
        np.testing.assert_allclose(groups.c1.numpy(), [[0.5, 1.0], [0.5, 1.0]])
        assert groups.c2.tolist() == [3.0, 3.0, 3.0]
        assert groups.c0 <= groups.count * groups.dim

    def test_empty_dataset(self):
        with pytest.raises(ParameterError):
            aggregate_coefficients(torch.zeros((0, 2), dtype=DTYPE), 2)


class TestPerturb:
    def test_draw_count(self):
        assert _noisy(4, 3, 0).draw_count == 23

    def test_infinite_budget_draws_nothing(self):
        groups = aggregate_coefficients(torch.zeros((2, 3), dtype=DTYPE), 4)
        noisy = perturb(groups, PrivacyBudget.for_width(4, float("inf")), RngState(0))
        assert noisy.is_zero()

    def test_pooled_scale(self):
        draws = []
        for seed in range(24):
            noisy = _noisy(20, 200, seed, scale=10.0)
            draws.append(torch.cat([torch.tensor([noisy.eta0], dtype=DTYPE), noisy.eta1.reshape(-1), noisy.eta2]))
        pooled = torch.cat(draws)
        assert pooled.numel() > 10 ** 5
        assert abs(float(pooled.abs().mean()) - 10.0) <= 0.2

    def test_record_round_trip(self):
        noisy = _noisy(3, 2, 5)
        restored = NoisyCoefficients.from_dict(noisy.to_dict())
        assert restored.eta0 == noisy.eta0
        assert torch.equal(restored.eta1, noisy.eta1)
        assert torch.equal(restored.eta2, noisy.eta2)
        assert restored.budget == noisy.budget


class TestPerturbedLoss:
    @pytest.fixture
    def autoencoder(self):
        return AutoencoderSpec([3, 2]).build(4, RngState(11))

    def test_zero_noise_matches_plain(self, autoencoder, blobs):
        batch = blobs.features[:16]
        loss, grads = perturbed_loss(autoencoder.net, batch, NoisyCoefficients.zeros(3, 4), 0.25)
        plain, plain_grads = plain_loss(autoencoder.net, batch)
        assert loss == plain
        for a, b in zip(grads.as_list(), plain_grads.as_list()):
            assert torch.equal(a, b)

    def test_difference_is_noise_term(self, autoencoder, blobs):
        noisy = _noisy(3, 4, 2, scale=5.0)
        expected = _noise_term_oracle(autoencoder.net.layers[0].weights, noisy)
        for batch in (blobs.features[:10], blobs.features[50:90]):
            loss, _ = perturbed_loss(autoencoder.net, batch, noisy)
            plain, _ = plain_loss(autoencoder.net, batch)
            assert loss - plain == pytest.approx(expected, rel=1e-12, abs=1e-9)

    def test_mean_reduction_divides_sum(self, autoencoder, blobs):
        batch = blobs.features[:16]
        mean, mean_grads = plain_loss(autoencoder.net, batch)
        total, total_grads = plain_loss(autoencoder.net, batch, reduction="sum")
        assert mean == pytest.approx(total / 16, rel=1e-12)
        for a, b in zip(mean_grads.as_list(), total_grads.as_list()):
            np.testing.assert_allclose(a.numpy(), b.numpy() / 16, rtol=1e-12, atol=1e-15)

    def test_unknown_reduction(self, autoencoder, blobs):
        with pytest.raises(ParameterError):
            plain_loss(autoencoder.net, blobs.features[:4], reduction="median")

    def test_narrow_first_layer_uses_leading_units(self, blobs):
        autoencoder = AutoencoderSpec([2, 3]).build(4, RngState(12))
        noisy = _noisy(3, 4, 3)
        value, grad = noise_term(autoencoder.net.layers[0].weights, noisy)
        assert value == pytest.approx(_noise_term_oracle(autoencoder.net.layers[0].weights, noisy), rel=1e-12)
        assert grad.shape == (2, 4)

    def test_noise_gradient_matches_finite_differences(self, autoencoder):
        noisy = _noisy(3, 4, 4, scale=3.0)
        weights = autoencoder.net.layers[0].weights.clone()
        _, analytic = noise_term(weights, noisy)
        numeric = torch.zeros_like(weights)
        for i in range(weights.shape[0]):
            for j in range(weights.shape[1]):
                up, down = weights.clone(), weights.clone()
                up[i, j] += 1e-5
                down[i, j] -= 1e-5
                numeric[i, j] = (noise_term(up, noisy)[0] - noise_term(down, noisy)[0]) / 2e-5
        assert float((analytic - numeric).norm() / numeric.norm()) <= 1e-4

    def test_full_gradient_matches_autograd(self, autoencoder, blobs):
        noisy = _noisy(3, 4, 6, scale=2.0)
        batch = blobs.features[:12]
        _, grads = perturbed_loss(autoencoder.net, batch, noisy, 0.5)

        params = [p.clone().requires_grad_(True) for p in autoencoder.net.parameters()]
        w1, w2, w3, w4 = params
        h = torch.sigmoid(batch @ w1.T)
        h = torch.sigmoid((2 * h - 1) @ w2.T)
        h = torch.sigmoid((2 * h - 1) @ w3.T)
        out = 2 * torch.sigmoid((2 * h - 1) @ w4.T) - 1
        g = torch.sigmoid(0.5 * w1)
        rows, cols = torch.triu_indices(3, 3)
        eta2 = noisy.eta2[[pair_index(int(p), int(q), 3) for p, q in zip(rows, cols)]]
        term = noisy.eta0 + (noisy.eta1 * g).sum() + (eta2 * (g[rows] * g[cols]).sum(dim=1)).sum()
        loss = ((out - batch) ** 2).sum() / 12 + 0.5 * term
        loss.backward()
        for analytic, param in zip(grads.as_list(), params):
            np.testing.assert_allclose(analytic.numpy(), param.grad.numpy(), rtol=1e-9, atol=1e-10)

    def test_first_layer_wider_than_noise(self, blobs):
        autoencoder = AutoencoderSpec([5]).build(4, RngState(13))
        with pytest.raises(StructuralError):
            perturbed_loss(autoencoder.net, blobs.features[:4], _noisy(3, 4, 0))

    def test_non_finite_term_is_named(self, autoencoder, blobs):
        noisy = NoisyCoefficients(float("inf"), torch.zeros((3, 4), dtype=DTYPE), torch.zeros(6, dtype=DTYPE),
                                  PrivacyBudget(1.0, 1.0, 1.0))
        with pytest.raises(NumericError) as info:
            perturbed_loss(autoencoder.net, blobs.features[:4], noisy)
        assert info.value.term == "noise"


def test_zero_noise_training_is_bit_identical():
    dataset = synth_blobs(RngState(21), 50, 4, 2, 1.5)
    spec = AutoencoderSpec([3])
    start = spec.build(4, RngState(22))
    zero = NoisyCoefficients.zeros(spec.width, 4)
    # 100 rows, batches of 20: 5 steps per epoch, 50 steps in total
    perturbed = fit_reconstruction(start, dataset, 10, 20, RngState(23), noisy=zero)
    plain = fit_reconstruction(start, dataset, 10, 20, RngState(23), noisy=None)
    assert perturbed.losses == plain.losses
    for a, b in zip(perturbed.autoencoder.net.parameters(), plain.autoencoder.net.parameters()):
        assert torch.equal(a, b)


@pytest.mark.parametrize("reduction", ["mean", "sum"])
def test_each_epoch_carries_one_copy_of_noise(reduction):
    dataset = synth_blobs(RngState(24), 50, 4, 2, 1.5)
    spec = AutoencoderSpec([3])
    start = spec.build(4, RngState(25))
    # a constant-only noise term shifts the loss without moving the weights
    constant = NoisyCoefficients(7.0, torch.zeros((3, 4), dtype=DTYPE), torch.zeros(6, dtype=DTYPE),
                                 PrivacyBudget(1.0, 1.0, 1.0))
    # 100 rows, batches of 30: three full batches and one of 10
    perturbed = fit_reconstruction(start, dataset, 4, 30, RngState(26), noisy=constant, reduction=reduction)
    plain = fit_reconstruction(start, dataset, 4, 30, RngState(26), noisy=None, reduction=reduction)
    for noisy_loss, plain_loss_value in zip(perturbed.losses, plain.losses):
        assert noisy_loss - plain_loss_value == pytest.approx(7.0, rel=1e-9)


def test_noise_weights_sum_to_one_per_epoch():
    sizes = [30, 30, 30, 10]
    assert sum(noise_weight(size, 100, 4, "mean") for size in sizes) == pytest.approx(1.0)
    assert sum(noise_weight(size, 100, 4, "sum") for size in sizes) == pytest.approx(1.0)
    assert noise_weight(10, 100, 4, "mean") == noise_weight(30, 100, 4, "mean")


class TestEmpiricalPrivacy:
    @pytest.fixture
    def neighbors(self):
        a = torch.zeros((3, 4), dtype=DTYPE)
        b = a.clone()
        b[1] = 1.0
        return a, b

    def test_identical_datasets(self, neighbors):
        a, _ = neighbors
        ratio = empirical_privacy_ratio(a, a, PrivacyBudget.for_width(1, 0.5), 10 ** 5, 20, RngState(0))
        assert 1.0 <= ratio <= 1.1

    @pytest.mark.parametrize("epsilon", [0.1, 0.5, 1.0])
    def test_ratio_within_budget(self, neighbors, epsilon):
        a, b = neighbors
        ratio = empirical_privacy_ratio(a, b, PrivacyBudget.for_width(1, epsilon), 10 ** 5, 20, RngState(1))
        assert ratio <= math.exp(epsilon) * 1.15

    def test_smaller_budget_is_closer_to_one(self, neighbors):
        a, b = neighbors
        tight = empirical_privacy_ratio(a, b, PrivacyBudget.for_width(1, 0.05), 10 ** 5, 20, RngState(2))
        loose = empirical_privacy_ratio(a, b, PrivacyBudget.for_width(1, 0.5), 10 ** 5, 20, RngState(2))
        assert tight < loose

    def test_non_neighbors_rejected(self, neighbors):
        a, _ = neighbors
        with pytest.raises(ParameterError):
            empirical_privacy_ratio(a, torch.ones((3, 4), dtype=DTYPE), PrivacyBudget.for_width(1, 0.5), 10 ** 4, 20,
                                    RngState(0))
