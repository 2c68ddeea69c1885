import logging
import math

import numpy as np
import pytest

from hypothesis import given, strategies as st

from bench.selfcheck import (
    check_ou_stationarity,
    check_predictive_prior,
    exact_linear_gaussian_case,
    exact_linear_gaussian_instance,
    grid_argmax,
    one_cell,
    random_closed_form_instance,
)
from conftest import make_batch
from drift import DriftEstimationError, GammaInit, SharingMode
from drift.estimator import GammaConfig, closed_form_gamma, estimate_gamma_mc, linearized_objective
from drift.ou import DriftState, GaussianBelief, gamma_to_timestep, ou_sample, predictive_prior
from drift.sharing import SharingScheme
from model import MlpSpec, TaskKind
from model.mlp import PriorSpec, init_mlp, loss_and_grad
from model.rng import lane
from optim.steps import batch_objective


def scalar_prior(mu0: float, sigma0: float) -> PriorSpec:
    return PriorSpec(np.array([mu0]), np.array([sigma0]), 1.0, np.array([sigma0]))


def scalar_drift(gamma: float) -> DriftState:
    return DriftState(np.array([gamma]), np.ones(1))


def test_predictive_prior_example():
    tilde = predictive_prior(GaussianBelief(np.array([2.0]), np.array([1.0])), scalar_prior(0.0, 2.0),
                             scalar_drift(0.5), one_cell(1))
    assert tilde.mu[0] == pytest.approx(1.0)
    assert tilde.sigma[0] ** 2 == pytest.approx(3.25)


@pytest.mark.parametrize("gamma, expected", [(1.0, (2.0, 1.0)), (0.0, (0.0, 2.0))])
def test_predictive_prior_limits(gamma, expected):
    tilde = predictive_prior(GaussianBelief(np.array([2.0]), np.array([1.0])), scalar_prior(0.0, 2.0),
                             scalar_drift(gamma), one_cell(1))
    assert (tilde.mu[0], tilde.sigma[0]) == pytest.approx(expected)


positive = st.floats(0.01, 5.0)


@given(st.floats(0, 1), st.floats(0, 1), positive, positive)
def test_predictive_variance_is_bounded_and_monotone(g1, g2, sigma_t, sigma0):
    post = GaussianBelief(np.array([0.3]), np.array([sigma_t]))
    prior = scalar_prior(-0.2, sigma0)
    low, high = sorted((g1, g2))
    var_low = predictive_prior(post, prior, scalar_drift(low), one_cell(1)).sigma[0] ** 2
    var_high = predictive_prior(post, prior, scalar_drift(high), one_cell(1)).sigma[0] ** 2

    lo, hi = sorted((sigma_t ** 2, sigma0 ** 2))
    for var in (var_low, var_high):
        assert lo * (1 - 1e-12) <= var <= hi * (1 + 1e-12)
    if sigma_t < sigma0:
        assert var_high <= var_low * (1 + 1e-12)


def test_drift_state_is_clipped():
    drift = DriftState(np.array([-0.5, 0.3, 1.7]), np.ones(3))
    np.testing.assert_array_equal(drift.gamma, [0.0, 0.3, 1.0])


def test_ou_sample_without_drift_is_exact(small_net, per_layer):
    params, prior = small_net
    moved = ou_sample(params, DriftState.constant(1.0, per_layer), prior, per_layer, 0, "t")
    np.testing.assert_array_equal(moved.values, params.values)


def test_ou_sample_full_reset_draws_from_prior():
    params, prior = init_mlp(MlpSpec((400, 100, 2)), 0.1, seed=0)
    sharing = SharingScheme.build(SharingMode.GLOBAL, params.groups)
    reset = DriftState.constant(0.0, sharing)

    first = ou_sample(params, reset, prior, sharing, 5, "t")
    other = ou_sample(params.with_values(params.values + 3.0), reset, prior, sharing, 5, "t")
    np.testing.assert_array_equal(first.values, other.values)

    z = (first.values - prior.mu0) / prior.sigma0
    assert abs(z.mean()) < 0.05
    assert abs(z.std() - 1) < 0.05


def test_ou_chain_converges_to_prior():
    check_ou_stationarity()


def test_predictive_prior_is_the_two_stage_marginal():
    check_predictive_prior()


@pytest.mark.parametrize("gamma, delta", [(1.0, 0.0), (math.exp(-1), 1.0), (0.5, math.log(2)), (0.0, math.inf)])
def test_gamma_to_timestep(gamma, delta):
    assert gamma_to_timestep(DriftState(np.array([gamma]), np.ones(1)))[0] == pytest.approx(delta)


def test_sharing_schemes_cover_every_parameter(small_net):
    params, _ = small_net
    schemes = {mode: SharingScheme.build(mode, params.groups) for mode in SharingMode}
    assert schemes[SharingMode.GLOBAL].num_cells == 1
    assert schemes[SharingMode.PER_LAYER].num_cells == len(params.groups)
    assert schemes[SharingMode.PER_PARAMETER].num_cells == params.size

    values = lane(0, "tests", "sharing").standard_normal(params.size)
    for scheme in schemes.values():
        assert scheme.cell_index.shape == (params.size,)
        np.testing.assert_allclose(scheme.cell_sums(values), scheme.reduce(values), atol=1e-12)
        assert scheme.reduce(np.ones(params.size)).sum() == params.size


def test_group_summary_reports_min_and_mean(small_net, per_layer):
    params, _ = small_net
    gamma = np.linspace(0.1, 0.4, per_layer.num_cells)
    summary = per_layer.group_summary(gamma, params.groups)
    assert summary["w0"] == pytest.approx((0.1, 0.1))
    assert summary["b1"] == pytest.approx((0.4, 0.4))


def perfectly_fit(bias_only):
    params, prior = bias_only
    params = params.with_values(np.array([0.0, 1.25]))
    batch = make_batch(np.zeros((3, 1)), [[1.25], [1.25], [1.25]])
    return params, prior, batch


def test_mc_gamma_stays_at_one_on_a_fitted_batch(bias_only):
    params, prior, batch = perfectly_fit(bias_only)
    sharing = SharingScheme.build(SharingMode.PER_LAYER, params.groups)
    drift = estimate_gamma_mc(GaussianBelief(params.values, 0.5 * prior.sigma0), prior, batch_objective(params, batch),
                              sharing, GammaConfig(k_gamma=10, eta_gamma=0.1), noise=np.zeros(params.size))
    assert np.all(np.abs(drift.gamma - 1) < 1e-6)


def test_mc_gamma_needs_rng_or_noise(bias_only):
    params, prior, batch = perfectly_fit(bias_only)
    sharing = SharingScheme.build(SharingMode.GLOBAL, params.groups)
    with pytest.raises(ValueError):
        estimate_gamma_mc(GaussianBelief(params.values, prior.sigma0), prior, batch_objective(params, batch),
                          sharing, GammaConfig())


def test_mc_gamma_wraps_non_finite_likelihood(bias_only):
    params, prior, _ = perfectly_fit(bias_only)
    sharing = SharingScheme.build(SharingMode.GLOBAL, params.groups)

    def broken(values):
        return float("nan"), np.zeros_like(values)

    with pytest.raises(DriftEstimationError) as info:
        estimate_gamma_mc(GaussianBelief(params.values, prior.sigma0), prior, broken, sharing,
                          GammaConfig(k_gamma=3), rng=lane(0, "tests"))
    assert info.value.step == 0


def mc_objective(gamma, post, prior, batch_loss, eps):
    std = np.sqrt(gamma ** 2 * post.sigma ** 2 + (1 - gamma ** 2) * prior.sigma0 ** 2)
    mean = gamma * post.mu + (1 - gamma) * prior.mu0
    log_liks = np.array([-batch_loss(mean + e * std)[0] for e in eps])
    top = log_liks.max()
    return top + math.log(np.mean(np.exp(log_liks - top)))


def linear_gaussian_instance(rng):
    spec = MlpSpec((2, 1), TaskKind.REGRESSION)
    params, prior = init_mlp(spec, 0.5, seed=int(rng.integers(1_000_000)))
    prior.mu0 = rng.normal(0, 1, params.size)
    post = GaussianBelief(rng.normal(0, 1, params.size), rng.uniform(0.1, 0.5, params.size) * prior.sigma0)
    batch = make_batch(rng.normal(0, 1, (3, 2)), rng.normal(0, 1, (3, 1)))
    eps = rng.standard_normal((2, params.size))
    return params, prior, post, batch_objective(params, batch), eps


def test_mc_gamma_step_matches_finite_differences():
    rng = lane(0, "tests", "mc_fd")
    eta, h = 1e-3, 1e-6
    for _ in range(20):
        params, prior, post, batch_loss, eps = linear_gaussian_instance(rng)
        sharing = SharingScheme.build(SharingMode.GLOBAL, params.groups)
        start = DriftState(np.array([0.5]), np.array([0.5]))
        cfg = GammaConfig(k_gamma=1, m_gamma=2, eta_gamma=eta, gamma_init=GammaInit.PREVIOUS)

        moved = estimate_gamma_mc(post, prior, batch_loss, sharing, cfg, previous=start, noise=eps)
        analytic = (moved.gamma[0] - 0.5) / eta
        numeric = (mc_objective(0.5 + h, post, prior, batch_loss, eps)
                   - mc_objective(0.5 - h, post, prior, batch_loss, eps)) / (2 * h)
        assert abs(analytic - numeric) / max(1.0, abs(numeric)) < 1e-5


def test_mc_gamma_step_ascends():
    rng = lane(0, "tests", "mc_sign")
    for _ in range(100):
        params, prior, post, batch_loss, eps = linear_gaussian_instance(rng)
        sharing = SharingScheme.build(SharingMode.GLOBAL, params.groups)
        start = float(rng.uniform(0.2, 0.8))
        cfg = GammaConfig(k_gamma=1, m_gamma=2, eta_gamma=1e-6, gamma_init=GammaInit.PREVIOUS)
        moved = estimate_gamma_mc(post, prior, batch_loss, sharing, cfg,
                                  previous=DriftState(np.array([start]), np.array([start])), noise=eps)
        before = mc_objective(start, post, prior, batch_loss, eps)
        after = mc_objective(moved.gamma[0], post, prior, batch_loss, eps)
        assert after >= before - 1e-12


def test_mc_gamma_starts_from_previous_only_when_configured(bias_only):
    params, prior, batch = perfectly_fit(bias_only)
    sharing = SharingScheme.build(SharingMode.GLOBAL, params.groups)
    previous = DriftState(np.array([0.3]), np.ones(1))
    post = GaussianBelief(params.values, prior.sigma0)
    kept = estimate_gamma_mc(post, prior, batch_objective(params, batch), sharing,
                             GammaConfig(gamma_init=GammaInit.PREVIOUS), previous=previous, noise=np.zeros(2))
    fresh = estimate_gamma_mc(post, prior, batch_objective(params, batch), sharing,
                              GammaConfig(), previous=previous, noise=np.zeros(2))
    assert kept.gamma0[0] == 0.3
    assert fresh.gamma0[0] == 1.0


def repeated_batch(rows: int):
    return make_batch(np.zeros((rows, 1)), [[1.0]] * rows)


def test_batch_objective_sums_over_examples(bias_only):
    params, _ = bias_only
    loss, grad = batch_objective(params, repeated_batch(4))(params.values)
    mean_loss, mean_grad = loss_and_grad(params, repeated_batch(4))
    assert loss == pytest.approx(4 * mean_loss)
    np.testing.assert_allclose(grad, 4 * mean_grad)


def test_mc_gamma_step_grows_with_batch_size(bias_only):
    params, prior = bias_only
    sharing = SharingScheme.build(SharingMode.GLOBAL, params.groups)
    post = GaussianBelief(params.values + 0.3, 0.5 * prior.sigma0)
    cfg = GammaConfig(k_gamma=1, eta_gamma=1e-4, gamma_init=GammaInit.PREVIOUS)
    start = DriftState(np.array([0.5]), np.array([0.5]))

    moves = []
    for rows in (1, 4):
        drift = estimate_gamma_mc(post, prior, batch_objective(params, repeated_batch(rows)), sharing, cfg,
                                  previous=start, noise=np.zeros(params.size))
        moves.append(drift.gamma[0] - 0.5)
    assert moves[0] > 0
    assert moves[1] == pytest.approx(4 * moves[0])


def closed_form_scalar(mu_shift, grad, var0, var_t, lam, gamma0=1.0):
    return closed_form_gamma(np.array([mu_shift]), np.zeros(1), np.array([math.sqrt(var_t)]),
                             np.array([math.sqrt(var0)]), np.array([grad]), lam, gamma0, one_cell(1)).gamma[0]


def test_closed_form_example_is_clipped():
    assert closed_form_scalar(1.0, 1.0, 1.0, 0.25, 1.0) == 1.0


def test_closed_form_without_gradient_returns_gamma0():
    assert closed_form_scalar(1.0, 0.0, 1.0, 0.25, 0.5, gamma0=0.7) == pytest.approx(0.7)


def test_closed_form_orthogonal_shift_gives_zero():
    gamma = closed_form_gamma(np.array([1.0, 0.0]), np.zeros(2), np.full(2, 0.5), np.ones(2),
                              np.array([0.0, 1.0]), 0.0, 1.0, one_cell(2)).gamma[0]
    assert gamma == 0.0


def test_closed_form_degenerate_denominator_keeps_gamma0(caplog):
    with caplog.at_level(logging.WARNING, logger="drift.estimator"):
        gamma = closed_form_scalar(1.0, 1.0, 0.25, 1.0, 0.0, gamma0=0.6)
    assert gamma == pytest.approx(0.6)
    assert "non-positive denominator" in caplog.text


def test_closed_form_rejects_negative_lambda():
    with pytest.raises(ValueError):
        closed_form_scalar(1.0, 1.0, 1.0, 0.25, -1.0)


def test_closed_form_matches_grid_search():
    rng = lane(0, "tests", "closed_form")
    checked = 0
    while checked < 100:
        inst = random_closed_form_instance(rng)
        if inst is None:
            continue
        checked += 1
        gamma = closed_form_gamma(sharing=one_cell(5), **inst).gamma[0]
        assert abs(gamma - grid_argmax(lambda g: linearized_objective(g, **inst))) <= 2e-3


def test_closed_form_tracks_exact_predictive_likelihood():
    rng = lane(0, "tests", "exact")
    for _ in range(20):
        closed, exact = exact_linear_gaussian_case(rng)
        assert abs(closed - exact) <= 0.05


def test_exact_case_exercises_the_variance_term():
    rng = lane(0, "tests", "exact_variance")
    moved = 0.0
    for _ in range(20):
        inst = exact_linear_gaussian_instance(rng)
        assert inst["sigma_t"] < inst["sigma0"]
        args = [np.array([inst[k]]) for k in ("mu_t", "mu0", "sigma_t", "sigma0")]
        grad = np.array([inst["y"] - inst["mu_t"]])
        gamma = closed_form_gamma(*args, grad, 1.0, 1.0, one_cell(1)).gamma[0]
        assert gamma == pytest.approx(inst["target"])
        args[2] = args[3]
        moved = max(moved, abs(gamma - closed_form_gamma(*args, grad, 1.0, 1.0, one_cell(1)).gamma[0]))
    assert moved > 0.01


def test_closed_form_sums_per_cell(small_net, per_layer):
    params, prior = small_net
    rng = lane(0, "tests", "cells")
    grad = rng.standard_normal(params.size)
    mu_t = prior.mu0 + 0.01 * rng.standard_normal(params.size)
    drift = closed_form_gamma(mu_t, prior.mu0, 0.5 * prior.sigma0, prior.sigma0, grad, 0.1, 1.0, per_layer)
    assert drift.gamma.shape == (per_layer.num_cells,)

    for cell, group in enumerate(params.groups):
        s = group.slice
        alone = closed_form_gamma(mu_t[s], prior.mu0[s], 0.5 * prior.sigma0[s], prior.sigma0[s], grad[s],
                                  0.1, 1.0, one_cell(group.length)).gamma[0]
        assert drift.gamma[cell] == pytest.approx(alone)


def test_loss_gradient_sign_convention(bias_only):
    # the log-likelihood gradient points from the prediction towards the target
    params, _ = bias_only
    _, grad = loss_and_grad(params.with_values(np.array([0.0, 0.0])), make_batch(np.zeros((1, 1)), [[1.0]]))
    assert -grad[1] > 0
