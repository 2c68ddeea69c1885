import numpy as np

from dataclasses import dataclass

from drift.sharing import SharingScheme
from model.mlp import ParamSet, PriorSpec
from model.rng import lane


@dataclass
class GaussianBelief:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class DriftState:
    gamma: np.ndarray
    gamma0: np.ndarray

    def __post_init__(self) -> None:
        self.gamma = np.clip(np.asarray(self.gamma, dtype=np.float64), 0.0, 1.0)
        self.gamma0 = np.asarray(self.gamma0, dtype=np.float64)

    @classmethod
    def constant(cls, value: float, sharing: SharingScheme) -> "DriftState":
        gamma = np.full(sharing.num_cells, float(value))
        return cls(gamma, gamma.copy())


def predictive_prior(post: GaussianBelief,
                     prior: PriorSpec,
                     drift: DriftState,
                     sharing: SharingScheme) -> GaussianBelief:
    """Push the posterior through one OU drift step."""
    g = sharing.expand(drift.gamma)
    mu = g * post.mu + (1 - g) * prior.mu0
    var = g ** 2 * post.sigma ** 2 + (1 - g ** 2) * prior.sigma0 ** 2
    return GaussianBelief(mu, np.sqrt(var))


def ou_step(values: np.ndarray,
            gamma: np.ndarray | float,
            mu0: np.ndarray | float,
            sigma0: np.ndarray | float,
            rng: np.random.Generator) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    noise_std = np.sqrt(np.maximum(1 - gamma ** 2, 0.0)) * sigma0
    return gamma * values + (1 - gamma) * mu0 + noise_std * rng.standard_normal(values.shape)


def ou_sample(theta: ParamSet,
              drift: DriftState,
              prior: PriorSpec,
              sharing: SharingScheme,
              seed: int,
              *keys: int | str) -> ParamSet:
    """Draw theta' ~ N(gamma*theta + (1-gamma)*mu0, (1-gamma^2)*sigma0^2) per parameter."""
    rng = lane(seed, "ou", *keys)
    return theta.with_values(ou_step(theta.values, sharing.expand(drift.gamma), prior.mu0, prior.sigma0, rng))


def ou_trajectory(x0: np.ndarray,
                  gamma: float,
                  mu0: float,
                  sigma0: float,
                  steps: int,
                  rng: np.random.Generator) -> np.ndarray:
    """States after each of `steps` drift steps, shape (steps, len(x0))."""
    x = np.array(x0, dtype=np.float64, ndmin=1)
    states = np.empty((steps, x.size))
    for t in range(steps):
        x = ou_step(x, gamma, mu0, sigma0, rng)
        states[t] = x
    return states


def gamma_to_timestep(drift: DriftState) -> np.ndarray:
    """delta = -ln(gamma); gamma = 0 maps to +inf."""
    gamma = drift.gamma
    with np.errstate(divide="ignore"):
        delta = -np.log(gamma)
    delta[gamma == 1.0] = 0.0
    return delta
