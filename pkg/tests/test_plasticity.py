import numpy as np
import pytest

from pathlib import Path

from bench.config import MetricOptions, load_config
from bench.runner import run_experiment
from bench.selfcheck import boundary_gamma_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run_desk(name: str, out_dir: Path):
    cfg = load_config(CONFIGS / f"{name}.json")
    cfg = cfg.model_copy(update={"output_dir": str(out_dir / name), "metrics": MetricOptions()})
    result = run_experiment(cfg)
    assert result.ok, [s.error for s in result.seeds]
    return result


def decline(result) -> float:
    """Mean over seeds of A_first - A_last."""
    return float(np.mean([s.per_task[min(s.per_task)] - s.per_task[max(s.per_task)] for s in result.seeds]))


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("desk")
    return {name: run_desk(f"desk_random_label_{name}", out_dir) for name in ("sgd", "soft_reset", "hard_reset")}


@pytest.mark.slow
def test_soft_reset_loses_less_plasticity_than_sgd(desk_runs):
    assert decline(desk_runs["soft_reset"]) < decline(desk_runs["sgd"]) - 0.02


@pytest.mark.slow
def test_gamma_drops_after_task_boundaries(desk_runs):
    seeds = desk_runs["soft_reset"].seeds
    after = np.mean([s.boundary_gamma for s in seeds])
    middle = np.mean([s.mid_task_gamma for s in seeds])
    assert after <= middle - 0.01


@pytest.mark.slow
def test_error_identity_holds_on_real_runs(desk_runs):
    for result in desk_runs.values():
        assert all(s.error_identity for s in result.seeds)
        assert len(result.seeds[0].per_task) == 10


def test_gamma_drops_after_boundaries_on_a_small_run(tmp_path):
    (seed,) = run_experiment(boundary_gamma_config(tmp_path)).seeds
    assert seed.status == "ok", seed.error
    assert seed.boundary_gamma <= seed.mid_task_gamma - 0.01
    assert seed.error_identity
