import math

import numpy as np
import pytest

from hypothesis import given, strategies as st

from conftest import make_batch
from model import MlpSpec, ModelError, PriorMeanMode, SIGMA_FLOOR, TaskKind
from model.checkpoint import load_checkpoint, save_checkpoint
from model.mlp import (
    PosteriorState,
    forward_loss,
    group_layout,
    init_mlp,
    loss_and_grad,
    posterior_init,
    predict,
)
from optim.steps import sgd_step

MNIST_MLP = (784, 256, 256, 256, 256, 10)


def test_prior_std_of_first_weight_group():
    _, prior = init_mlp(MlpSpec(MNIST_MLP), 0.1, seed=0)
    assert prior.sigma0[0] == pytest.approx(0.1 / math.sqrt(784))
    assert prior.sigma0[0] == pytest.approx(0.003571, abs=1e-6)


def test_toy_network_layout():
    spec = MlpSpec((10, 5, 1), TaskKind.REGRESSION)
    groups = group_layout(spec)
    assert [g.label for g in groups] == ["w0", "b0", "w1", "b1"]
    assert spec.num_params == 10 * 5 + 5 + 5 * 1 + 1 == 61


def test_three_layer_network_has_three_weight_and_bias_groups():
    groups = group_layout(MlpSpec((10, 5, 5, 1)))
    assert sum(g.kind == "weight" for g in groups) == 3
    assert sum(g.kind == "bias" for g in groups) == 3


@given(st.lists(st.integers(1, 12), min_size=2, max_size=6))
def test_groups_partition_the_parameter_vector(sizes):
    spec = MlpSpec(tuple(sizes))
    groups = group_layout(spec)
    offset = 0
    for group in groups:
        assert group.offset == offset
        offset += group.length
    assert offset == spec.num_params == sum(sizes[l] * sizes[l + 1] + sizes[l + 1] for l in range(len(sizes) - 1))


def test_init_is_deterministic():
    a, _ = init_mlp(MlpSpec((6, 8, 3)), 0.1, seed=7)
    b, _ = init_mlp(MlpSpec((6, 8, 3)), 0.1, seed=7)
    assert a.values.tobytes() == b.values.tobytes()


def test_init_draws_fan_in_scaled_weights_and_zero_biases():
    params, _ = init_mlp(MlpSpec((400, 100, 2)), 0.1, seed=3)
    w0, b0 = params.arrays()[:2]
    assert w0.size >= 10_000
    assert abs(w0.std() / (1 / math.sqrt(400)) - 1) < 0.05
    assert not b0.any()


def test_prior_mean_modes():
    params, specific = init_mlp(MlpSpec((6, 8, 3)), 0.1, seed=0)
    _, zero = init_mlp(MlpSpec((6, 8, 3)), 0.1, seed=0, prior_mean=PriorMeanMode.ZERO)
    np.testing.assert_array_equal(specific.mu0, params.values)
    assert not zero.mu0.any()


def test_bias_prior_uses_layer_fan_in():
    params, prior = init_mlp(MlpSpec((9, 4, 2)), 0.5, seed=0)
    b0 = params.groups[1]
    np.testing.assert_allclose(prior.sigma0[b0.slice], 0.5 / 3)
    assert np.all(prior.sigma0 > 0)


@pytest.mark.parametrize("p", [0.0, -0.1, 1.5])
def test_init_rejects_invalid_prior_scale(p):
    with pytest.raises(ModelError):
        init_mlp(MlpSpec((2, 2)), p, seed=0)


def test_spec_needs_two_positive_widths():
    with pytest.raises(ModelError):
        MlpSpec((5,))
    with pytest.raises(ModelError):
        MlpSpec((5, 0, 2))


def test_zero_weight_network_loss_is_log_classes():
    params, _ = init_mlp(MlpSpec((4, 10)), 0.1, seed=0)
    zero = params.with_values(np.zeros(params.size))
    loss = forward_loss(zero, make_batch(np.ones((3, 4)), [0, 4, 9]))
    assert float(loss.value) == pytest.approx(math.log(10))


def test_regression_loss_is_zero_for_exact_prediction(bias_only):
    params, _ = bias_only
    params = params.with_values(np.array([0.0, 1.25]))
    loss, _ = loss_and_grad(params, make_batch(np.zeros((2, 1)), [[1.25], [1.25]]))
    assert loss == 0.0


def test_regression_loss_is_half_squared_error(bias_only):
    params, _ = bias_only
    params = params.with_values(np.array([0.0, 1.0]))
    loss, grad = loss_and_grad(params, make_batch(np.zeros((1, 1)), [[3.0]]))
    assert loss == pytest.approx(2.0)
    np.testing.assert_allclose(grad, [0.0, -2.0])


def test_one_small_sgd_step_decreases_loss(small_net, small_batch):
    params, _ = small_net
    before, _ = loss_and_grad(params, small_batch)
    after, _ = loss_and_grad(sgd_step(params, small_batch, 1e-3), small_batch)
    assert after < before


def test_summed_loss_scales_with_batch_size(small_net, small_batch):
    params, _ = small_net
    mean, mean_grad = loss_and_grad(params, small_batch)
    total, total_grad = loss_and_grad(params, small_batch, reduction="sum")
    assert total == pytest.approx(len(small_batch.targets) * mean)
    np.testing.assert_allclose(total_grad, len(small_batch.targets) * mean_grad)
    with pytest.raises(ModelError):
        loss_and_grad(params, small_batch, reduction="median")


def test_width_mismatch_is_rejected(small_net):
    params, _ = small_net
    with pytest.raises(ModelError):
        forward_loss(params, make_batch(np.ones((2, 5)), [0, 1]))


def test_predict_matches_forward_pass(small_net, small_batch):
    params, _ = small_net
    logits = predict(params, small_batch.inputs)
    assert logits.shape == (4, 3)
    manual = small_batch.inputs @ params.arrays()[0] + params.arrays()[1]
    manual = np.maximum(manual, 0) @ params.arrays()[2] + params.arrays()[3]
    np.testing.assert_allclose(logits, manual)


def test_posterior_init_identity_scaling(small_net):
    params, prior = small_net
    post = posterior_init(params, prior, 1.0)
    np.testing.assert_allclose(post.sigma, prior.sigma0)
    np.testing.assert_array_equal(post.mu, params.values)


def test_posterior_init_bayesian_defaults():
    params, prior = init_mlp(MlpSpec((6, 8, 3)), 0.05, seed=0)
    post = posterior_init(params, prior, 0.9)
    np.testing.assert_allclose(post.sigma, 0.045 * prior.sigma_base)


def test_posterior_init_rejects_non_positive_scale(small_net):
    params, prior = small_net
    with pytest.raises(ModelError):
        posterior_init(params, prior, 0.0)


def test_posterior_sigma_is_floored():
    post = PosteriorState.from_sigma(np.zeros(2), np.array([0.0, 1e-12]))
    assert np.all(post.sigma >= SIGMA_FLOOR * (1 - 1e-12))


def test_checkpoint_round_trip(tmp_path, small_net):
    params, _ = small_net
    save_checkpoint(tmp_path / "params", params, seed=11)
    loaded, seed = load_checkpoint(tmp_path / "params")
    assert seed == 11
    assert loaded.spec == params.spec
    assert loaded.values.tobytes() == params.values.tobytes()
    assert (tmp_path / "params.bin").stat().st_size == 8 * params.size


def test_checkpoint_with_wrong_length_is_rejected(tmp_path, small_net):
    params, _ = small_net
    save_checkpoint(tmp_path / "params", params, seed=0)
    np.zeros(3, dtype="<f8").tofile(tmp_path / "params.bin")
    with pytest.raises(ModelError):
        load_checkpoint(tmp_path / "params")
