import numpy as np

from typing import Any, Sequence

from autodiff import NonFiniteError
from drift.estimator import BatchLoss, GammaConfig, estimate_gamma_mc
from drift.ou import DriftState, GaussianBelief
from drift.sharing import SharingScheme
from model.mlp import ParamGroup, ParamSet, PriorSpec, draw_init, loss_and_grad
from optim import LrMode, ResetPolicy, ResetScope


def batch_objective(params: ParamSet, batch: Any) -> BatchLoss:
    """theta -> (batch negative log-likelihood, gradient) for the network layout of `params`.

    The likelihood of a batch is a product over its examples, so the loss is
    summed rather than averaged.
    """
    def objective(values: np.ndarray) -> tuple[float, np.ndarray]:
        return loss_and_grad(params.with_values(values), batch, reduction="sum")
    return objective


def gradient(params: ParamSet, batch: Any) -> np.ndarray:
    _, grad = loss_and_grad(params, batch)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("gradient")
    return grad


def sgd_step(params: ParamSet, batch: Any, alpha: float) -> ParamSet:
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    return params.with_values(params.values - alpha * gradient(params, batch))


def l2_init_step(params: ParamSet, theta0: np.ndarray, batch: Any, alpha: float, l2_lambda: float) -> ParamSet:
    """SGD on L(theta) + l2_lambda * ||theta - theta0||^2."""
    if l2_lambda < 0:
        raise ValueError(f"l2_lambda must be non-negative, got {l2_lambda}")
    grad = gradient(params, batch) + 2 * l2_lambda * (params.values - theta0)
    return params.with_values(params.values - alpha * grad)


def shrink_perturb(params: ParamSet, shrink_lambda: float, perturb_sigma: float, seed: int, step: int) -> ParamSet:
    if not 0 < shrink_lambda <= 1 or perturb_sigma < 0:
        raise ValueError(f"invalid shrink/perturb: lambda={shrink_lambda}, sigma={perturb_sigma}")
    values = shrink_lambda * params.values
    if perturb_sigma > 0:
        values = values + perturb_sigma * draw_init(params.spec, seed, "perturb", step)
    return params.with_values(values)


def shrink_perturb_step(params: ParamSet,
                        batch: Any,
                        alpha: float,
                        shrink_lambda: float,
                        perturb_sigma: float,
                        seed: int,
                        step: int = 0) -> ParamSet:
    """theta <- lambda * theta + sigma * xi with xi from the initializer, then one SGD step."""
    return sgd_step(shrink_perturb(params, shrink_lambda, perturb_sigma, seed, step), batch, alpha)


def reset_mask(groups: Sequence[ParamGroup], scope: ResetScope) -> list[ParamGroup]:
    match ResetScope(scope):
        case ResetScope.ALL:
            return list(groups)
        case ResetScope.LAST:
            last = max(g.layer for g in groups)
            return [g for g in groups if g.layer == last]
        case ResetScope.NONE:
            return []


def hard_reset(params: ParamSet,
               theta0: np.ndarray,
               mask: Sequence[ParamGroup],
               policy: ResetPolicy = ResetPolicy.FIXED,
               seed: int = 0,
               step: int = 0) -> ParamSet:
    """Re-draw the masked groups from the initializing distribution; others are untouched."""
    if not mask:
        return params

    match ResetPolicy(policy):
        case ResetPolicy.FIXED:
            source = theta0
        case ResetPolicy.FRESH:
            source = draw_init(params.spec, seed, "hard_reset", step)

    values = params.values.copy()
    for group in mask:
        values[group.slice] = source[group.slice]
    return params.with_values(values)


def effective_lr(alpha: float, gamma: np.ndarray, s: float) -> np.ndarray:
    """alpha * (gamma^2 + (1 - gamma^2) / s^2)."""
    return alpha * (gamma ** 2 + (1 - gamma ** 2) / s ** 2)


def drift_target(values: np.ndarray, mu0: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    return gamma * values + (1 - gamma) * mu0


def map_belief(params: ParamSet, prior: PriorSpec, s: float) -> GaussianBelief:
    """Point estimate with the fixed posterior std s * p * sigma_base."""
    return GaussianBelief(params.values, s * prior.p * prior.sigma_base)


def _drift_or_estimate(params: ParamSet,
                       prior: PriorSpec,
                       drift_cfg: GammaConfig,
                       batch: Any,
                       s: float,
                       sharing: SharingScheme,
                       rng: np.random.Generator | None,
                       drift: DriftState | None) -> DriftState:
    if drift is not None:
        return drift
    return estimate_gamma_mc(map_belief(params, prior, s), prior, batch_objective(params, batch),
                             sharing, drift_cfg, rng)


def soft_reset_step(params: ParamSet,
                    prior: PriorSpec,
                    drift_cfg: GammaConfig,
                    batch: Any,
                    alpha: float,
                    s: float,
                    sharing: SharingScheme,
                    rng: np.random.Generator | None = None,
                    drift: DriftState | None = None) -> tuple[ParamSet, DriftState]:
    """One Soft Reset update.

    gamma is estimated on the incoming batch unless `drift` is given. The
    parameters move to gamma*theta + (1-gamma)*mu0 and take an SGD step there
    with the per-parameter rate alpha * (gamma^2 + (1-gamma^2)/s^2).
    """
    drift = _drift_or_estimate(params, prior, drift_cfg, batch, s, sharing, rng, drift)
    g = sharing.expand(drift.gamma)
    target = params.with_values(drift_target(params.values, prior.mu0, g))
    lr = effective_lr(alpha, g, s)
    return target.with_values(target.values - lr * gradient(target, batch)), drift


def proximal_soft_reset_step(params: ParamSet,
                             prior: PriorSpec,
                             drift_cfg: GammaConfig,
                             batch: Any,
                             alpha: float,
                             s: float,
                             lam: float,
                             k_theta: int,
                             sharing: SharingScheme,
                             rng: np.random.Generator | None = None,
                             drift: DriftState | None = None) -> tuple[ParamSet, DriftState]:
    """K steps on L(theta) + lam/2 * sum |theta - target|^2 / r from theta = target, rate alpha * r."""
    if k_theta < 1 or lam < 0:
        raise ValueError(f"invalid proximal settings: k_theta={k_theta}, lam={lam}")

    drift = _drift_or_estimate(params, prior, drift_cfg, batch, s, sharing, rng, drift)
    g = sharing.expand(drift.gamma)
    target = drift_target(params.values, prior.mu0, g)
    r = g ** 2 + (1 - g ** 2) / s ** 2

    current = params.with_values(target)
    for _ in range(k_theta):
        grad = gradient(current, batch) + lam * (current.values - target) / r
        current = current.with_values(current.values - alpha * r * grad)
    return current, drift


def proximal_objective(params: ParamSet, batch: Any, target: np.ndarray, r: np.ndarray, lam: float) -> float:
    loss, _ = loss_and_grad(params, batch)
    return loss + 0.5 * lam * float(np.sum((params.values - target) ** 2 / r))


def perfect_soft_reset_step(params: ParamSet,
                            prior: PriorSpec,
                            batch: Any,
                            alpha: float,
                            s: float,
                            gamma_hat: float,
                            at_boundary: bool,
                            lr_mode: LrMode = LrMode.ADAPTED) -> ParamSet:
    """Soft reset with gamma = gamma_hat on boundary steps and 1 elsewhere."""
    if not 0 <= gamma_hat <= 1:
        raise ValueError(f"gamma_hat must lie in [0, 1], got {gamma_hat}")
    if not at_boundary:
        return sgd_step(params, batch, alpha)

    target = params.with_values(drift_target(params.values, prior.mu0, gamma_hat))
    lr = float(effective_lr(alpha, np.float64(gamma_hat), s)) if lr_mode == LrMode.ADAPTED else alpha
    return target.with_values(target.values - lr * gradient(target, batch))
