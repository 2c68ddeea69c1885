from dataclasses import dataclass
from enum import Enum


class TaskKind(str, Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


class PriorMeanMode(str, Enum):
    SPECIFIC_INIT = "specific_init"
    ZERO = "zero"


SIGMA_FLOOR = 1e-8


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    task_kind: TaskKind = TaskKind.CLASSIFICATION

    def __post_init__(self) -> None:
        if len(self.layer_sizes) < 2 or any(n <= 0 for n in self.layer_sizes):
            raise ModelError(f"layer_sizes needs at least 2 positive widths, got {self.layer_sizes}")
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def num_params(self) -> int:
        sizes = self.layer_sizes
        return sum(sizes[l] * sizes[l + 1] + sizes[l + 1] for l in range(self.num_layers))
