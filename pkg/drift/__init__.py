from enum import Enum


class SharingMode(str, Enum):
    GLOBAL = "global"
    PER_LAYER = "per_layer"
    PER_PARAMETER = "per_parameter"


class GammaInit(str, Enum):
    ONE = "one"
    PREVIOUS = "previous"


class DriftEstimationError(RuntimeError):
    def __init__(self, step: int, cause: str) -> None:
        self.step = step
        self.cause = cause
        super().__init__(f"gamma estimation failed at inner step {step}: {cause}")
