import numpy as np

from dataclasses import dataclass, replace
from enum import Enum


class StreamKind(str, Enum):
    RANDOM_LABEL = "random_label"
    PERMUTED = "permuted"
    LABEL_NOISE = "label_noise"
    MEAN_TRACKING = "mean_tracking"


class IdxFormatError(ValueError):
    def __init__(self, path: str, reason: str) -> None:
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class StreamError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    image_shape: tuple[int, int] | None = None

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_features(self) -> int:
        return self.inputs.shape[1]


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray
    step: int
    task: int
    boundary: bool

    def without_boundary(self) -> "Batch":
        return replace(self, boundary=False)
