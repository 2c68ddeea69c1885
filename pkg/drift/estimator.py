import logging

import numpy as np

from dataclasses import dataclass
from typing import Callable

from autodiff import NonFiniteError
from drift import DriftEstimationError, GammaInit
from drift.ou import DriftState, GaussianBelief
from drift.sharing import SharingScheme
from model.mlp import PriorSpec

logger = logging.getLogger(__name__)

# maps a flat parameter vector to (summed batch negative log-likelihood, its gradient)
BatchLoss = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class GammaConfig:
    k_gamma: int = 1
    m_gamma: int = 1
    eta_gamma: float = 0.01
    gamma_init: GammaInit = GammaInit.ONE

    def __post_init__(self) -> None:
        if self.k_gamma < 1 or self.m_gamma < 1 or self.eta_gamma <= 0:
            raise ValueError(f"invalid gamma estimation settings: {self}")


def estimate_gamma_mc(post: GaussianBelief,
                      prior: PriorSpec,
                      batch_loss: BatchLoss,
                      sharing: SharingScheme,
                      cfg: GammaConfig,
                      rng: np.random.Generator | None = None,
                      previous: DriftState | None = None,
                      noise: np.ndarray | None = None) -> DriftState:
    """Gradient ascent on the reparameterised Monte-Carlo predictive log-likelihood.

    Each step samples theta = mu~(gamma) + eps * sigma~(gamma) M times and moves
    gamma along d/dgamma log (1/M) sum_i exp(-L(theta_i)), clipping to [0, 1]
    after every step. Passing `noise` (shape (M, D) or (D,)) freezes eps.
    """
    if cfg.gamma_init == GammaInit.PREVIOUS and previous is not None:
        gamma = previous.gamma.copy()
    else:
        gamma = np.ones(sharing.num_cells)
    gamma0 = gamma.copy()

    if noise is not None:
        noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    elif rng is None:
        raise ValueError("estimate_gamma_mc needs either rng or frozen noise")

    var_t = post.sigma ** 2
    var_0 = prior.sigma0 ** 2
    mean_shift = post.mu - prior.mu0

    for step in range(cfg.k_gamma):
        eps = noise if noise is not None else rng.standard_normal((cfg.m_gamma, post.mu.size))
        g = sharing.expand(gamma)
        std = np.sqrt(g ** 2 * var_t + (1 - g ** 2) * var_0)
        mean = g * post.mu + (1 - g) * prior.mu0
        dstd = g * (var_t - var_0) / std

        log_liks = np.empty(len(eps))
        cell_grads = np.empty((len(eps), sharing.num_cells))
        for i, e in enumerate(eps):
            try:
                loss, grad = batch_loss(mean + e * std)
            except NonFiniteError as exc:
                raise DriftEstimationError(step, str(exc)) from exc
            if not np.isfinite(loss):
                raise DriftEstimationError(step, "non-finite predictive likelihood")
            log_liks[i] = -loss
            cell_grads[i] = sharing.reduce(-grad * (mean_shift + e * dstd))

        # gradient of log-mean-exp weights each sample by its normalised likelihood
        weights = np.exp(log_liks - log_liks.max())
        weights /= weights.sum()
        gamma = np.clip(gamma + cfg.eta_gamma * (weights @ cell_grads), 0.0, 1.0)

    return DriftState(gamma, gamma0)


def closed_form_gamma(mu_t: np.ndarray,
                      mu0: np.ndarray,
                      sigma_t: np.ndarray,
                      sigma0: np.ndarray,
                      grad: np.ndarray,
                      lam: float,
                      gamma0: np.ndarray | float,
                      sharing: SharingScheme) -> DriftState:
    """Maximiser of the linearised predictive log-likelihood with an l2 pull to gamma0.

    `grad` is the gradient of the batch log-likelihood at mu_t, i.e. minus the
    gradient of the loss summed over the batch. Per cell:
        gamma = (sum (mu_t - mu0) g + lam gamma0) / (sum g^2 (sigma0^2 - sigma_t^2) + lam)
    Cells with a non-positive denominator keep gamma0.
    """
    if lam < 0:
        raise ValueError(f"lam must be non-negative, got {lam}")
    gamma0 = np.broadcast_to(np.asarray(gamma0, dtype=np.float64), (sharing.num_cells,)).copy()

    numerator = sharing.cell_sums((mu_t - mu0) * grad) + lam * gamma0
    denominator = sharing.cell_sums(grad ** 2 * (sigma0 ** 2 - sigma_t ** 2)) + lam

    degenerate = denominator <= 0
    if degenerate.any():
        logger.warning("closed-form gamma: non-positive denominator, keeping gamma0",
                       extra={"cells": int(degenerate.sum())})

    safe = np.where(degenerate, 1.0, denominator)
    gamma = np.where(degenerate, gamma0, numerator / safe)
    return DriftState(np.clip(gamma, 0.0, 1.0), gamma0)


def linearized_objective(gamma: float,
                         mu_t: np.ndarray,
                         mu0: np.ndarray,
                         sigma_t: np.ndarray,
                         sigma0: np.ndarray,
                         grad: np.ndarray,
                         lam: float,
                         gamma0: float) -> float:
    """Quadratic objective maximised by `closed_form_gamma` for a single shared gamma."""
    mean = gamma * mu_t + (1 - gamma) * mu0
    var = gamma ** 2 * sigma_t ** 2 + (1 - gamma ** 2) * sigma0 ** 2
    return float(grad @ mean + 0.5 * (grad ** 2) @ var - 0.5 * lam * (gamma - gamma0) ** 2)
