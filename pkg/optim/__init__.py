from enum import Enum


class Variant(str, Enum):
    ONLINE_SGD = "online_sgd"
    HARD_RESET = "hard_reset"
    L2_INIT = "l2_init"
    SHRINK_PERTURB = "shrink_perturb"
    SOFT_RESET = "soft_reset"
    PROXIMAL_SOFT_RESET = "proximal_soft_reset"
    BAYESIAN_SOFT_RESET = "bayesian_soft_reset"
    PERFECT_SOFT_RESET = "perfect_soft_reset"


# variants that are told where task boundaries are
BOUNDARY_AWARE = frozenset({Variant.HARD_RESET, Variant.PERFECT_SOFT_RESET})

# variants that carry a drift parameter
DRIFT_VARIANTS = frozenset({
    Variant.SOFT_RESET,
    Variant.PROXIMAL_SOFT_RESET,
    Variant.BAYESIAN_SOFT_RESET,
    Variant.PERFECT_SOFT_RESET,
})


class GammaEstimator(str, Enum):
    MC = "mc"
    CLOSED_FORM = "closed_form"


class ResetScope(str, Enum):
    ALL = "all"
    LAST = "last"
    NONE = "none"


class ResetPolicy(str, Enum):
    FIXED = "fixed"
    FRESH = "fresh"


class LrMode(str, Enum):
    CONSTANT = "constant"
    ADAPTED = "adapted"


class ElboError(FloatingPointError):
    def __init__(self, data_term: float, kl_term: float) -> None:
        self.data_term = data_term
        self.kl_term = kl_term
        super().__init__(f"non-finite variational objective: data term {data_term}, KL term {kl_term}")
