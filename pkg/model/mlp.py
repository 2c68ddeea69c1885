import numpy as np

from dataclasses import dataclass, field
from typing import Any

from autodiff import Node, backward
from model import MlpSpec, ModelError, PriorMeanMode, SIGMA_FLOOR, TaskKind
from model.rng import lane


@dataclass(frozen=True)
class ParamGroup:
    layer: int
    kind: str
    offset: int
    length: int
    shape: tuple[int, ...]
    fan_in: int

    @property
    def label(self) -> str:
        return f"{'w' if self.kind == 'weight' else 'b'}{self.layer}"

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.length)


def group_layout(spec: MlpSpec) -> tuple[ParamGroup, ...]:
    groups = []
    offset = 0
    for layer in range(spec.num_layers):
        n_in, n_out = spec.layer_sizes[layer], spec.layer_sizes[layer + 1]
        for kind, shape in (("weight", (n_in, n_out)), ("bias", (n_out,))):
            length = int(np.prod(shape))
            groups.append(ParamGroup(layer, kind, offset, length, shape, n_in))
            offset += length
    return tuple(groups)


@dataclass
class ParamSet:
    spec: MlpSpec
    values: np.ndarray
    groups: tuple[ParamGroup, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.groups:
            self.groups = group_layout(self.spec)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.spec.num_params,):
            raise ModelError(f"expected {self.spec.num_params} parameters, got shape {self.values.shape}")

    @property
    def size(self) -> int:
        return self.values.size

    def with_values(self, values: np.ndarray) -> "ParamSet":
        return ParamSet(self.spec, values, self.groups)

    def arrays(self) -> list[np.ndarray]:
        return [self.values[g.slice].reshape(g.shape) for g in self.groups]


@dataclass
class PriorSpec:
    mu0: np.ndarray
    sigma0: np.ndarray
    p: float
    sigma_base: np.ndarray
    mode: PriorMeanMode = PriorMeanMode.SPECIFIC_INIT


@dataclass
class PosteriorState:
    mu: np.ndarray
    log_sigma: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    @classmethod
    def from_sigma(cls, mu: np.ndarray, sigma: np.ndarray) -> "PosteriorState":
        return cls(np.array(mu, dtype=np.float64), np.log(np.maximum(sigma, SIGMA_FLOOR)))


def base_std(groups: tuple[ParamGroup, ...]) -> np.ndarray:
    """1/sqrt(fan_in) per parameter; biases use their layer's fan-in."""
    return np.concatenate([np.full(g.length, 1.0 / np.sqrt(g.fan_in)) for g in groups])


def draw_init(spec: MlpSpec, seed: int, *keys: int | str) -> np.ndarray:
    """One draw from the initializing distribution: N(0, 1/fan_in) weights, zero biases."""
    values = np.zeros(spec.num_params)
    for index, group in enumerate(group_layout(spec)):
        if group.kind == "weight":
            rng = lane(seed, *keys, index)
            values[group.slice] = rng.standard_normal(group.length) / np.sqrt(group.fan_in)
    return values


def init_mlp(spec: MlpSpec,
             p: float,
             seed: int,
             prior_mean: PriorMeanMode = PriorMeanMode.SPECIFIC_INIT) -> tuple[ParamSet, PriorSpec]:
    if not 0 < p <= 1:
        raise ModelError(f"prior rescaling p must lie in (0, 1], got {p}")

    params = ParamSet(spec, draw_init(spec, seed, "init"))
    sigma_base = base_std(params.groups)

    match prior_mean:
        case PriorMeanMode.SPECIFIC_INIT:
            mu0 = params.values.copy()
        case PriorMeanMode.ZERO:
            mu0 = np.zeros(params.size)
        case _:
            raise ModelError(f"unknown prior mean mode: {prior_mean}")

    prior = PriorSpec(mu0=mu0, sigma0=p * sigma_base, p=p, sigma_base=sigma_base, mode=prior_mean)
    return params, prior


def posterior_init(params: ParamSet, prior: PriorSpec, f: float) -> PosteriorState:
    if not 0 < f <= 1:
        raise ModelError(f"posterior rescaling f must lie in (0, 1], got {f}")
    return PosteriorState.from_sigma(params.values.copy(), f * prior.p * prior.sigma_base)


def _check_inputs(spec: MlpSpec, inputs: np.ndarray) -> None:
    if inputs.ndim != 2 or inputs.shape[1] != spec.layer_sizes[0]:
        raise ModelError(f"input width {inputs.shape[1:]} does not match layer_sizes[0]={spec.layer_sizes[0]}")


def _network(spec: MlpSpec, leaves: list[Node], inputs: np.ndarray) -> Node:
    h = Node.constant(inputs)
    for layer in range(spec.num_layers):
        h = h @ leaves[2 * layer] + leaves[2 * layer + 1]
        if layer < spec.num_layers - 1:
            h = h.relu()
    return h


def _loss(spec: MlpSpec, outputs: Node, targets: np.ndarray, reduction: str = "mean") -> Node:
    match spec.task_kind:
        case TaskKind.CLASSIFICATION:
            per_example = outputs.softmax_cross_entropy(targets)
        case TaskKind.REGRESSION:
            per_example = outputs.gaussian_nll(targets)
        case _:
            raise ModelError(f"unknown task kind: {spec.task_kind}")

    match reduction:
        case "mean":
            return per_example.mean()
        case "sum":
            return per_example.sum()
        case _:
            raise ModelError(f"unknown loss reduction: {reduction}")


def _leaves(params: ParamSet) -> list[Node]:
    return [Node.parameter(a, name=g.label) for a, g in zip(params.arrays(), params.groups)]


def forward_loss(params: ParamSet, batch: Any) -> Node:
    """Scalar mean loss node with one parameter leaf per group."""
    inputs = np.asarray(batch.inputs, dtype=np.float64)
    _check_inputs(params.spec, inputs)
    return _loss(params.spec, _network(params.spec, _leaves(params), inputs), batch.targets)


def loss_and_grad(params: ParamSet, batch: Any, reduction: str = "mean") -> tuple[float, np.ndarray]:
    """Batch loss and its flat gradient; `reduction="sum"` gives the batch negative log-likelihood."""
    inputs = np.asarray(batch.inputs, dtype=np.float64)
    _check_inputs(params.spec, inputs)
    leaves = _leaves(params)
    root = _loss(params.spec, _network(params.spec, leaves, inputs), batch.targets, reduction)
    grads = backward(root)
    return float(root.value), np.concatenate([grads[leaf].reshape(-1) for leaf in leaves])


def predict(params: ParamSet, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    _check_inputs(params.spec, inputs)
    with Node.no_grad():
        leaves = [Node.constant(a) for a in params.arrays()]
        return _network(params.spec, leaves, inputs).value


def evaluate(params: ParamSet, batch: Any) -> tuple[np.ndarray, float]:
    """Outputs and mean loss on a batch, without building a gradient graph."""
    inputs = np.asarray(batch.inputs, dtype=np.float64)
    _check_inputs(params.spec, inputs)
    with Node.no_grad():
        leaves = [Node.constant(a) for a in params.arrays()]
        outputs = _network(params.spec, leaves, inputs)
        return outputs.value, float(_loss(params.spec, outputs, batch.targets).value)
