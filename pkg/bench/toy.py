import logging

import numpy as np
import pandas as pd

from pathlib import Path
from typing import Sequence

from bench.config import ExperimentConfig, MetricOptions, ModelConfig
from bench.metrics import steps_to_recover
from bench.runner import run_experiment
from optim import ResetScope, Variant
from optim.config import OptimizerConfig
from streams import StreamKind
from streams.generators import mean_schedule
from streams.spec import StreamSpec

logger = logging.getLogger(__name__)

SWITCH_EVERY = 50
NUM_SEGMENTS = 4
RECOVERY_THRESHOLD = 0.2

TOY_VARIANTS: dict[str, OptimizerConfig] = {
    "sgd_a0.05": OptimizerConfig(variant=Variant.ONLINE_SGD, alpha=0.05),
    "sgd_a0.15": OptimizerConfig(variant=Variant.ONLINE_SGD, alpha=0.15),
    "reset_b0.05": OptimizerConfig(variant=Variant.HARD_RESET, alpha=0.05, reset_alpha=0.05),
    "reset_b0.15": OptimizerConfig(variant=Variant.HARD_RESET, alpha=0.05, reset_alpha=0.15),
    # higher rate at the switch without resetting
    "boost_b0.15": OptimizerConfig(variant=Variant.HARD_RESET, alpha=0.05, reset_alpha=0.15,
                                   reset_scope=ResetScope.NONE),
    "soft_reset": OptimizerConfig(variant=Variant.SOFT_RESET, alpha=0.05, s=0.7, eta_gamma=0.1, k_gamma=5),
}


def toy_config(name: str, optimizer: OptimizerConfig, seeds: Sequence[int]) -> ExperimentConfig:
    """(10, 5, 1) MLP on y = mu + 0.01 eps, mu flipping between -2 and 2 every 50 steps."""
    return ExperimentConfig(
        name=f"toy_{name}",
        stream=StreamSpec(kind=StreamKind.MEAN_TRACKING, num_tasks=NUM_SEGMENTS, switch_every=SWITCH_EVERY,
                          batch_size=1, noise_std=0.01, input_dim=10),
        model=ModelConfig(hidden_sizes=[5]),
        optimizer=optimizer,
        seeds=list(seeds),
        metrics=MetricOptions(flush_every=SWITCH_EVERY),
    )


def recovery_steps(frame: pd.DataFrame) -> list[int]:
    steps = frame["step"].to_numpy()
    target = np.array([mean_schedule(int(t), SWITCH_EVERY) for t in steps])
    switches = [int(t) for t in steps if t > 0 and t % SWITCH_EVERY == 0]
    return steps_to_recover(frame["prediction_mean"].to_numpy(), target, switches,
                            RECOVERY_THRESHOLD, cap=SWITCH_EVERY)


def run_toy(out_dir: str | Path, seeds: Sequence[int] = (0, 1, 2),
            variants: dict[str, OptimizerConfig] | None = None) -> pd.DataFrame:
    """Mean steps to re-attain |prediction - mu| < 0.2 after each switch, per variant,
    plus the mean absolute tracking error over the whole stream."""
    out_dir = Path(out_dir)
    rows = []
    for name, optimizer in (variants or TOY_VARIANTS).items():
        result = run_experiment(toy_config(name, optimizer, seeds), out_dir / name)
        recovered, errors = [], []
        for seed in result.seeds:
            if seed.status != "ok":
                raise RuntimeError(f"toy variant {name} failed on seed {seed.seed}: {seed.error}")
            frame = pd.read_csv(seed.csv_path)
            recovered += recovery_steps(frame)
            errors.append(tracking_error(frame))
        rows.append({"variant": name, "mean_steps_to_recover": float(np.mean(recovered)),
                     "max_steps_to_recover": int(np.max(recovered)), "switches": len(recovered),
                     "mean_abs_error": float(np.mean(errors))})
        logger.info("toy variant finished", extra=rows[-1])

    table = pd.DataFrame(rows)
    table.to_csv(out_dir / "toy.csv", index=False)
    return table


def tracking_error(frame: pd.DataFrame) -> float:
    target = np.array([mean_schedule(int(t), SWITCH_EVERY) for t in frame["step"]])
    return float(np.mean(np.abs(frame["prediction_mean"].to_numpy() - target)))
