from pydantic import BaseModel, ConfigDict, Field, model_validator

from drift import GammaInit, SharingMode
from drift.estimator import GammaConfig
from optim import GammaEstimator, LrMode, ResetPolicy, ResetScope, Variant

MAP_PRIOR_P = 0.1
BAYESIAN_PRIOR_P = 0.05


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    variant: Variant = Variant.ONLINE_SGD
    alpha: float = Field(0.1, gt=0)

    # drift estimation
    eta_gamma: float = Field(0.01, gt=0)
    k_gamma: int = Field(1, ge=1)
    m_gamma: int = Field(1, ge=1)
    gamma_init: GammaInit = GammaInit.ONE
    gamma_estimator: GammaEstimator = GammaEstimator.MC
    gamma_l2: float = Field(1.0, ge=0)
    sharing: SharingMode = SharingMode.PER_LAYER

    # parameter updates
    k_theta: int = Field(1, ge=1)
    m_theta: int = Field(1, ge=1)
    alpha_mu: float = Field(0.1, gt=0)
    alpha_sigma: float = Field(0.1, gt=0)
    lam: float = Field(0.01, ge=0, alias="lambda")
    s: float = Field(0.9, gt=0, le=1)
    # None picks 0.05 for the Bayesian variant and 0.1 otherwise
    p: float | None = Field(None, gt=0, le=1)
    f: float = Field(0.9, gt=0, le=1)

    # baselines
    l2_init_lambda: float = Field(0.01, ge=0)
    shrink_lambda: float = Field(0.8, gt=0, le=1)
    perturb_sigma: float = Field(0.01, ge=0)
    reset_scope: ResetScope = ResetScope.ALL
    reset_policy: ResetPolicy = ResetPolicy.FIXED
    # None resets on declared task boundaries, N resets every N steps
    reset_schedule: int | None = Field(None, ge=1)
    # learning rate of the step taken right after a reset
    reset_alpha: float | None = Field(None, gt=0)

    # perfect soft reset
    gamma_hat: float = Field(0.0, ge=0, le=1)
    lr_mode: LrMode = LrMode.ADAPTED

    @model_validator(mode="after")
    def _default_prior_scale(self) -> "OptimizerConfig":
        if self.p is None:
            self.p = BAYESIAN_PRIOR_P if self.variant == Variant.BAYESIAN_SOFT_RESET else MAP_PRIOR_P
        return self

    @property
    def gamma_config(self) -> GammaConfig:
        return GammaConfig(self.k_gamma, self.m_gamma, self.eta_gamma, self.gamma_init)
