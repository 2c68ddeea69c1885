import numpy as np

from typing import Any

from autodiff import NonFiniteError
from drift.estimator import GammaConfig, estimate_gamma_mc
from drift.ou import DriftState, GaussianBelief, predictive_prior
from drift.sharing import SharingScheme
from model import MlpSpec, SIGMA_FLOOR
from model.mlp import ParamSet, PosteriorState, PriorSpec, loss_and_grad
from optim import ElboError
from optim.steps import batch_objective


def gaussian_kl_bracket(mu, sigma, mu_tilde, sigma_tilde) -> np.ndarray:
    """[(mu - mu~)^2 + sigma^2 - sigma~^2 ln sigma^2] / (2 sigma~^2), per parameter.

    Adding ln sigma~ - 1/2 gives KL(N(mu, sigma^2) || N(mu~, sigma~^2)).
    """
    mu, sigma = np.asarray(mu, dtype=np.float64), np.asarray(sigma, dtype=np.float64)
    var_tilde = np.asarray(sigma_tilde, dtype=np.float64) ** 2
    return ((mu - mu_tilde) ** 2 + sigma ** 2 - var_tilde * np.log(sigma ** 2)) / (2 * var_tilde)


def gaussian_kl(mu, sigma, mu_tilde, sigma_tilde) -> np.ndarray:
    return gaussian_kl_bracket(mu, sigma, mu_tilde, sigma_tilde) + np.log(sigma_tilde) - 0.5


def variance_ratio(sigma_t: np.ndarray, sigma_tilde: np.ndarray) -> np.ndarray:
    """r = sigma_t^2 / sigma~^2; 1 when there is no drift."""
    return sigma_t ** 2 / sigma_tilde ** 2


def bayesian_soft_reset_step(posterior: PosteriorState,
                             prior: PriorSpec,
                             drift_cfg: GammaConfig,
                             batch: Any,
                             spec: MlpSpec,
                             sharing: SharingScheme,
                             rng: np.random.Generator,
                             k_theta: int = 1,
                             m_theta: int = 1,
                             alpha_mu: float = 0.1,
                             alpha_sigma: float = 0.1,
                             lam: float = 0.01,
                             drift: DriftState | None = None) -> tuple[PosteriorState, DriftState]:
    """One Bayesian Soft Reset update of a mean-field Gaussian posterior.

    gamma is estimated with the current posterior std, the posterior is pushed
    through the drift model, and K simultaneous gradient steps are taken on
        E_eps[L(mu + eps sigma)] + lam/2 sum_i r_i [(mu_i - mu~_i)^2 + sigma_i^2 - sigma~_i^2 ln sigma_i^2]
    with r = sigma_t^2 / sigma~^2 held fixed. sigma moves through log sigma.
    """
    if k_theta < 1 or m_theta < 1:
        raise ValueError(f"k_theta and m_theta must be >= 1, got {k_theta}, {m_theta}")

    template = ParamSet(spec, posterior.mu)
    belief = GaussianBelief(posterior.mu, posterior.sigma)

    def objective(values: np.ndarray) -> tuple[float, np.ndarray]:
        return loss_and_grad(template.with_values(values), batch)

    if drift is None:
        drift = estimate_gamma_mc(belief, prior, batch_objective(template, batch), sharing, drift_cfg, rng)

    tilde = predictive_prior(belief, prior, drift, sharing)
    r = variance_ratio(belief.sigma, tilde.sigma)
    var_tilde = tilde.sigma ** 2

    mu = tilde.mu.copy()
    log_sigma = np.log(np.maximum(tilde.sigma, SIGMA_FLOOR))
    for _ in range(k_theta):
        sigma = np.exp(log_sigma)
        data_term = 0.0
        grad_mu = np.zeros_like(mu)
        grad_sigma = np.zeros_like(mu)
        for eps in rng.standard_normal((m_theta, mu.size)):
            try:
                loss, grad = objective(mu + eps * sigma)
            except NonFiniteError as exc:
                raise ElboError(float("nan"), float("nan")) from exc
            data_term += loss / m_theta
            grad_mu += grad / m_theta
            grad_sigma += grad * eps / m_theta

        kl_term = 0.5 * lam * float(np.sum(r * ((mu - tilde.mu) ** 2 + sigma ** 2 - var_tilde * np.log(sigma ** 2))))
        if not (np.isfinite(data_term) and np.isfinite(kl_term) and np.all(np.isfinite(grad_mu))):
            raise ElboError(data_term, kl_term)

        grad_mu += lam * r * (mu - tilde.mu)
        grad_sigma += lam * r * (sigma - var_tilde / sigma)

        mu = mu - alpha_mu * grad_mu
        log_sigma = np.maximum(log_sigma - alpha_sigma * sigma * grad_sigma, np.log(SIGMA_FLOOR))

    return PosteriorState(mu, log_sigma), drift
