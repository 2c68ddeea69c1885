import logging
import tempfile
import time

import numpy as np

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from scipy import integrate

from bench.config import ExperimentConfig
from bench.runner import run_experiment
from drift import SharingMode
from drift.estimator import GammaConfig, closed_form_gamma, linearized_objective
from drift.ou import DriftState, GaussianBelief, ou_step, ou_trajectory, predictive_prior
from drift.sharing import SharingScheme
from model import MlpSpec, TaskKind
from model.mlp import ParamSet, PriorSpec, evaluate, init_mlp, loss_and_grad
from model.rng import lane
from optim.bayesian import gaussian_kl
from optim.steps import l2_init_step, proximal_soft_reset_step, sgd_step, shrink_perturb_step, soft_reset_step
from streams import Batch

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def mlp_gradient_error(params: ParamSet, batch: Batch, h: float = 1e-5) -> float:
    """Max |analytic - central difference| / max(1, |analytic|) over all parameters."""
    _, analytic = loss_and_grad(params, batch)
    numeric = np.empty_like(analytic)
    for i in range(params.size):
        plus, minus = params.values.copy(), params.values.copy()
        plus[i] += h
        minus[i] -= h
        numeric[i] = (evaluate(params.with_values(plus), batch)[1]
                      - evaluate(params.with_values(minus), batch)[1]) / (2 * h)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


def random_mlp_instance(rng: np.random.Generator, seed: int,
                        max_width: int = 16, max_batch: int = 4) -> tuple[ParamSet, Batch]:
    widths = tuple(int(w) for w in rng.integers(2, max_width + 1, size=4))
    params, _ = init_mlp(MlpSpec(widths, TaskKind.CLASSIFICATION), 0.1, seed)
    rows = int(rng.integers(1, max_batch + 1))
    batch = Batch(rng.standard_normal((rows, widths[0])), rng.integers(0, widths[-1], size=rows), 0, 0, False)
    return params.with_values(params.values + 0.1 * rng.standard_normal(params.size)), batch


def check_gradients(instances: int = 100) -> str:
    rng = lane(0, "selfcheck", "gradients")
    worst = max(mlp_gradient_error(*random_mlp_instance(rng, i)) for i in range(instances))
    if worst >= 1e-5:
        raise AssertionError(f"max relative error {worst:.2e}")
    return f"max relative error {worst:.2e} over {instances} networks"


def check_reductions() -> str:
    rng = lane(0, "selfcheck", "reductions")
    params, prior = init_mlp(MlpSpec((6, 8, 3)), 0.1, 0)
    batch = Batch(rng.standard_normal((4, 6)), rng.integers(0, 3, size=4), 0, 0, False)
    sharing = SharingScheme.build(SharingMode.PER_LAYER, params.groups)
    no_drift = DriftState.constant(1.0, sharing)
    cfg = GammaConfig()

    reference = sgd_step(params, batch, 0.1).values
    variants = {
        "soft_reset": soft_reset_step(params, prior, cfg, batch, 0.1, 0.5, sharing, drift=no_drift)[0],
        "proximal": proximal_soft_reset_step(params, prior, cfg, batch, 0.1, 0.5, 0.0, 1, sharing,
                                             drift=no_drift)[0],
        "l2_init": l2_init_step(params, prior.mu0, batch, 0.1, 0.0),
        "shrink_perturb": shrink_perturb_step(params, batch, 0.1, 1.0, 0.0, seed=0),
    }
    gaps = {name: float(np.max(np.abs(p.values - reference))) for name, p in variants.items()}
    if max(gaps.values()) > 1e-12:
        raise AssertionError(f"variants differ from sgd: {gaps}")
    return "all variants within 1e-12 of sgd"


def check_ou_stationarity(steps: int = 100_000, chains: int = 16) -> str:
    rng = lane(0, "selfcheck", "ou")
    states = ou_trajectory(rng.standard_normal(chains), 0.9, 0.0, 1.0, steps, rng)
    mean, var = float(states.mean()), float(states.var())
    if abs(mean) >= 0.02 or not 0.95 <= var <= 1.05:
        raise AssertionError(f"mean {mean:.4f}, variance {var:.4f}")
    return f"mean {mean:.4f}, variance {var:.4f}"


def check_predictive_prior(settings: int = 10, samples: int = 100_000) -> str:
    rng = lane(0, "selfcheck", "marginal")
    for _ in range(settings):
        gamma, mu, sigma = rng.uniform(0, 1), rng.normal(0, 2), rng.uniform(0.1, 2)
        mu0, sigma0 = rng.normal(0, 1), rng.uniform(0.1, 2)
        theta = mu + sigma * rng.standard_normal(samples)
        drifted = ou_step(theta, gamma, mu0, sigma0, rng)

        expected = _scalar_predictive_prior(mu, sigma, mu0, sigma0, gamma)
        se_mean = expected.sigma[0] / np.sqrt(samples)
        se_var = expected.sigma[0] ** 2 * np.sqrt(2 / (samples - 1))
        mean_off = abs(drifted.mean() - expected.mu[0]) > 3 * se_mean
        var_off = abs(drifted.var(ddof=1) - expected.sigma[0] ** 2) > 3 * se_var
        if mean_off or var_off:
            raise AssertionError(f"gamma={gamma:.3f}: sample ({drifted.mean():.4f}, {drifted.var():.4f}) "
                                 f"vs ({expected.mu[0]:.4f}, {expected.sigma[0] ** 2:.4f})")
    return f"{settings} settings within 3 standard errors"


def one_cell(size: int) -> SharingScheme:
    return SharingScheme(SharingMode.GLOBAL, np.zeros(size, dtype=np.int64), 1, (slice(0, size),))


def _scalar_predictive_prior(mu: float, sigma: float, mu0: float, sigma0: float, gamma: float) -> GaussianBelief:
    prior = PriorSpec(np.array([mu0]), np.array([sigma0]), 1.0, np.array([sigma0]))
    return predictive_prior(GaussianBelief(np.array([mu]), np.array([sigma])), prior,
                            DriftState(np.array([gamma]), np.ones(1)), one_cell(1))


def random_closed_form_instance(rng: np.random.Generator, size: int = 5) -> dict | None:
    """Random global-cell instance, or None when the unclipped optimum is outside [0, 1]."""
    sigma0 = rng.uniform(0.5, 1.5, size)
    instance = dict(
        mu_t=rng.normal(0, 1, size), mu0=rng.normal(0, 1, size),
        sigma_t=sigma0 * rng.uniform(0.1, 0.9, size), sigma0=sigma0,
        grad=rng.normal(0, 1, size), lam=float(rng.uniform(0.1, 2)), gamma0=1.0,
    )
    num = instance["grad"] @ (instance["mu_t"] - instance["mu0"]) + instance["lam"] * instance["gamma0"]
    den = (instance["grad"] ** 2) @ (instance["sigma0"] ** 2 - instance["sigma_t"] ** 2) + instance["lam"]
    return instance if den > 0 and 0 <= num / den <= 1 else None


def grid_argmax(objective: Callable[[float], float], resolution: float = 1e-3) -> float:
    grid = np.linspace(0.0, 1.0, int(round(1 / resolution)) + 1)
    return float(grid[int(np.argmax([objective(g) for g in grid]))])


def check_closed_form(instances: int = 100, exact_instances: int = 20) -> str:
    rng = lane(0, "selfcheck", "closed_form")
    worst = 0.0
    found = 0
    while found < instances:
        inst = random_closed_form_instance(rng)
        if inst is None:
            continue
        found += 1
        gamma = closed_form_gamma(sharing=one_cell(5), **inst).gamma[0]
        best = grid_argmax(lambda g: linearized_objective(g, **inst))
        worst = max(worst, abs(gamma - best))
    if worst > 2e-3:
        raise AssertionError(f"linearised objective: |delta gamma| {worst:.2e}")

    worst_exact = max(abs(g - e) for g, e in (exact_linear_gaussian_case(rng) for _ in range(exact_instances)))
    if worst_exact > 0.05:
        raise AssertionError(f"exact predictive likelihood: |delta gamma| {worst_exact:.3f}")
    return f"grid {worst:.1e}, exact likelihood {worst_exact:.3f}"


def exact_linear_gaussian_instance(rng: np.random.Generator) -> dict:
    """One-parameter model y = theta + N(0, 1) with sigma_t below sigma0.

    The observation is placed so the closed form lands on `target` in [0.2, 0.8].
    """
    sigma0 = 0.05
    sigma_t = sigma0 * rng.uniform(0.2, 0.8)
    mu0 = rng.normal()
    shift = rng.uniform(0.05, 0.15) * rng.choice([-1.0, 1.0])
    target = rng.uniform(0.2, 0.8)
    # smaller root of target * delta * g^2 - shift * g + (target - 1) = 0
    delta = sigma0 ** 2 - sigma_t ** 2
    root = np.sqrt(shift ** 2 + 4 * target * delta * (1 - target))
    grad = 2 * (target - 1) / (shift + np.copysign(root, shift))
    mu_t = mu0 + shift
    return dict(mu_t=mu_t, mu0=mu0, sigma_t=sigma_t, sigma0=sigma0, y=mu_t + grad, target=target)


def exact_linear_gaussian_case(rng: np.random.Generator) -> tuple[float, float]:
    """(closed-form gamma, grid argmax of the exact predictive log-likelihood
    log N(y; mu~, 1 + sigma~^2) minus the same l2 penalty)."""
    lam, gamma0 = 1.0, 1.0
    inst = exact_linear_gaussian_instance(rng)
    mu_t, mu0, sigma_t, sigma0, y = (inst[k] for k in ("mu_t", "mu0", "sigma_t", "sigma0", "y"))

    closed = closed_form_gamma(np.array([mu_t]), np.array([mu0]), np.array([sigma_t]), np.array([sigma0]),
                               np.array([y - mu_t]), lam, gamma0, one_cell(1)).gamma[0]

    def exact(g: float) -> float:
        mean = g * mu_t + (1 - g) * mu0
        var = 1 + g ** 2 * sigma_t ** 2 + (1 - g ** 2) * sigma0 ** 2
        return -(y - mean) ** 2 / (2 * var) - 0.5 * np.log(var) - 0.5 * lam * (g - gamma0) ** 2

    return float(closed), grid_argmax(exact)


def quadrature_kl(mu: float, sigma: float, mu_tilde: float, sigma_tilde: float) -> float:
    def integrand(x: float) -> float:
        log_q = -0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma)
        log_p = -0.5 * ((x - mu_tilde) / sigma_tilde) ** 2 - np.log(sigma_tilde)
        return np.exp(log_q) / np.sqrt(2 * np.pi) * (log_q - log_p)

    value, _ = integrate.quad(integrand, mu - 12 * sigma, mu + 12 * sigma, epsabs=1e-12, epsrel=1e-12, limit=200)
    return value


def check_kl(instances: int = 50) -> str:
    rng = lane(0, "selfcheck", "kl")
    worst = 0.0
    for _ in range(instances):
        mu, mu_tilde = rng.normal(0, 1, 2)
        sigma, sigma_tilde = rng.uniform(0.2, 2, 2)
        worst = max(worst, abs(float(gaussian_kl(mu, sigma, mu_tilde, sigma_tilde))
                               - quadrature_kl(mu, sigma, mu_tilde, sigma_tilde)))
    if worst > 1e-6:
        raise AssertionError(f"max KL gap {worst:.2e}")
    return f"max KL gap {worst:.2e}"


def boundary_gamma_config(output_dir: str | Path | None = None) -> ExperimentConfig:
    """A small random-label Soft Reset run on the synthetic fallback data."""
    return ExperimentConfig.model_validate({
        "name": "boundary_gamma",
        "stream": {"kind": "random_label", "subset_size": 64, "num_tasks": 3, "epochs_per_task": 30,
                   "batch_size": 16},
        "model": {"hidden_sizes": [32, 32]},
        "optimizer": {"variant": "soft_reset", "alpha": 0.1, "s": 0.5, "eta_gamma": 0.05,
                      "sharing": "per_layer"},
        "seeds": [0],
        "output_dir": str(output_dir) if output_dir is not None else None,
        "synthetic": True,
    })


def check_boundary_gamma(margin: float = 0.01) -> str:
    with tempfile.TemporaryDirectory() as out_dir:
        (seed,) = run_experiment(boundary_gamma_config(out_dir), Path(out_dir)).seeds
    if seed.status != "ok":
        raise AssertionError(f"run failed: {seed.error}")
    if seed.boundary_gamma is None or seed.boundary_gamma > seed.mid_task_gamma - margin:
        raise AssertionError(f"gamma after boundaries {seed.boundary_gamma}, mid-task {seed.mid_task_gamma}")
    return f"gamma {seed.boundary_gamma:.3f} after boundaries vs {seed.mid_task_gamma:.3f} mid-task"


CHECKS: dict[str, Callable[[], str]] = {
    "gradients": check_gradients,
    "variant_reductions": check_reductions,
    "ou_stationarity": check_ou_stationarity,
    "predictive_prior": check_predictive_prior,
    "closed_form_gamma": check_closed_form,
    "gaussian_kl": check_kl,
    "boundary_gamma": check_boundary_gamma,
}


def run_selfcheck(names: list[str] | None = None) -> list[CheckResult]:
    results = []
    for name in names or list(CHECKS):
        started = time.perf_counter()
        try:
            detail, passed = CHECKS[name](), True
        except AssertionError as exc:
            detail, passed = str(exc), False
        results.append(CheckResult(name, passed, detail, time.perf_counter() - started))
        log = logger.info if passed else logger.error
        log("selfcheck", extra={"check": name, "passed": passed, "detail": detail,
                                "seconds": results[-1].seconds})
    return results
