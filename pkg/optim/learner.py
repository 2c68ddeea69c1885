import logging
import time

import numpy as np

from dataclasses import dataclass
from typing import Any

from drift import GammaInit
from drift.estimator import closed_form_gamma, estimate_gamma_mc
from drift.ou import DriftState, GaussianBelief
from drift.sharing import SharingScheme
from model import MlpSpec, PriorMeanMode
from model.mlp import ParamSet, evaluate, init_mlp, loss_and_grad, posterior_init
from model.rng import lane
from optim import GammaEstimator, LrMode, Variant
from optim.bayesian import bayesian_soft_reset_step
from optim.config import OptimizerConfig
from optim.steps import (
    batch_objective,
    effective_lr,
    hard_reset,
    l2_init_step,
    map_belief,
    perfect_soft_reset_step,
    proximal_soft_reset_step,
    reset_mask,
    sgd_step,
    shrink_perturb_step,
    soft_reset_step,
)

logger = logging.getLogger(__name__)


@dataclass
class StepReport:
    loss: float
    # (min, mean) of gamma per parameter group; None for variants without drift
    gamma: dict[str, tuple[float, float]] | None
    # (min, mean, max) of the effective learning rate per parameter group
    lr: dict[str, tuple[float, float, float]]
    lr_mean: float
    wall_clock: float


class Learner:
    """Owns the parameters (or posterior) of one run and applies the configured update per batch."""

    def __init__(self,
                 spec: MlpSpec,
                 cfg: OptimizerConfig,
                 seed: int,
                 prior_mean: PriorMeanMode = PriorMeanMode.SPECIFIC_INIT) -> None:
        self.spec = spec
        self.cfg = cfg
        self.seed = seed
        self.params, self.prior = init_mlp(spec, cfg.p, seed, prior_mean)
        self.theta0 = self.params.values.copy()
        self.sharing = SharingScheme.build(cfg.sharing, self.params.groups)
        self.posterior = posterior_init(self.params, self.prior, cfg.f) if self.bayesian else None
        self.drift: DriftState | None = None

    @property
    def bayesian(self) -> bool:
        return self.cfg.variant == Variant.BAYESIAN_SOFT_RESET

    @property
    def mean_params(self) -> ParamSet:
        """Parameters used for prediction: the posterior mean for the Bayesian variant."""
        if self.posterior is not None:
            return self.params.with_values(self.posterior.mu)
        return self.params

    def evaluate(self, batch: Any) -> tuple[np.ndarray, float]:
        return evaluate(self.mean_params, batch)

    def _reset_due(self, batch: Any) -> bool:
        if self.cfg.reset_schedule is not None:
            return batch.step > 0 and batch.step % self.cfg.reset_schedule == 0
        return bool(batch.boundary) and batch.step > 0

    def _estimate(self, batch: Any, belief: GaussianBelief) -> DriftState:
        cfg = self.cfg
        previous = self.drift if cfg.gamma_init == GammaInit.PREVIOUS else None
        params = self.params.with_values(belief.mu)

        match cfg.gamma_estimator:
            case GammaEstimator.MC:
                return estimate_gamma_mc(belief, self.prior, batch_objective(params, batch), self.sharing,
                                         cfg.gamma_config, lane(self.seed, "gamma", batch.step), previous)
            case GammaEstimator.CLOSED_FORM:
                _, grad = loss_and_grad(params, batch, reduction="sum")
                gamma0 = previous.gamma if previous is not None else 1.0
                # the closed form takes the log-likelihood gradient
                return closed_form_gamma(belief.mu, self.prior.mu0, belief.sigma, self.prior.sigma0,
                                         -grad, cfg.gamma_l2, gamma0, self.sharing)

    def step(self, batch: Any, loss: float | None = None) -> StepReport:
        """One update on `batch`. `loss` is the pre-update loss when the caller already evaluated it."""
        started = time.perf_counter()
        cfg = self.cfg
        if loss is None:
            _, loss = self.evaluate(batch)
        lr = np.full(self.params.size, cfg.alpha)
        drift = None

        match cfg.variant:
            case Variant.ONLINE_SGD:
                self.params = sgd_step(self.params, batch, cfg.alpha)

            case Variant.HARD_RESET:
                alpha = cfg.alpha
                if self._reset_due(batch):
                    mask = reset_mask(self.params.groups, cfg.reset_scope)
                    self.params = hard_reset(self.params, self.theta0, mask, cfg.reset_policy, self.seed, batch.step)
                    alpha = cfg.reset_alpha or cfg.alpha
                    logger.debug("hard reset", extra={"step": batch.step, "groups": [g.label for g in mask]})
                lr[:] = alpha
                self.params = sgd_step(self.params, batch, alpha)

            case Variant.L2_INIT:
                self.params = l2_init_step(self.params, self.theta0, batch, cfg.alpha, cfg.l2_init_lambda)

            case Variant.SHRINK_PERTURB:
                self.params = shrink_perturb_step(self.params, batch, cfg.alpha, cfg.shrink_lambda,
                                                  cfg.perturb_sigma, self.seed, batch.step)

            case Variant.SOFT_RESET:
                drift = self._estimate(batch, map_belief(self.params, self.prior, cfg.s))
                self.params, drift = soft_reset_step(self.params, self.prior, cfg.gamma_config, batch,
                                                     cfg.alpha, cfg.s, self.sharing, drift=drift)
                lr = effective_lr(cfg.alpha, self.sharing.expand(drift.gamma), cfg.s)

            case Variant.PROXIMAL_SOFT_RESET:
                drift = self._estimate(batch, map_belief(self.params, self.prior, cfg.s))
                self.params, drift = proximal_soft_reset_step(self.params, self.prior, cfg.gamma_config, batch,
                                                              cfg.alpha, cfg.s, cfg.lam, cfg.k_theta,
                                                              self.sharing, drift=drift)
                lr = effective_lr(cfg.alpha, self.sharing.expand(drift.gamma), cfg.s)

            case Variant.BAYESIAN_SOFT_RESET:
                belief = GaussianBelief(self.posterior.mu, self.posterior.sigma)
                drift = self._estimate(batch, belief)
                self.posterior, drift = bayesian_soft_reset_step(
                    self.posterior, self.prior, cfg.gamma_config, batch, self.spec, self.sharing,
                    lane(self.seed, "posterior", batch.step), cfg.k_theta, cfg.m_theta,
                    cfg.alpha_mu, cfg.alpha_sigma, cfg.lam, drift=drift,
                )
                self.params = self.params.with_values(self.posterior.mu)
                lr[:] = cfg.alpha_mu

            case Variant.PERFECT_SOFT_RESET:
                at_boundary = self._reset_due(batch)
                gamma = cfg.gamma_hat if at_boundary else 1.0
                drift = DriftState.constant(gamma, self.sharing)
                self.params = perfect_soft_reset_step(self.params, self.prior, batch, cfg.alpha, cfg.s,
                                                      cfg.gamma_hat, at_boundary, cfg.lr_mode)
                if at_boundary and cfg.lr_mode == LrMode.ADAPTED:
                    lr[:] = effective_lr(cfg.alpha, np.float64(gamma), cfg.s)

            case _:
                raise ValueError(f"unknown variant: {cfg.variant}")

        if drift is not None:
            self.drift = drift

        return StepReport(
            loss=loss,
            gamma=self.sharing.group_summary(drift.gamma, self.params.groups) if drift is not None else None,
            lr={g.label: (float(lr[g.slice].min()), float(lr[g.slice].mean()), float(lr[g.slice].max()))
                for g in self.params.groups},
            lr_mean=float(lr.mean()),
            wall_clock=time.perf_counter() - started,
        )
