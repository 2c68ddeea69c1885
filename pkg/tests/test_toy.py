import pandas as pd
import pytest

from pathlib import Path

from bench.toy import (NUM_SEGMENTS, SWITCH_EVERY, TOY_VARIANTS, recovery_steps, run_toy, toy_config,
                       tracking_error)
from optim import Variant
from optim.config import OptimizerConfig


# frozen from the first run of the seeded toy stream; delete the file to re-record
FROZEN_TOY = Path(__file__).parent / "regression" / "toy_recovery.csv"
FROZEN_COLUMNS = ["mean_steps_to_recover", "max_steps_to_recover", "mean_abs_error"]


@pytest.fixture(scope="module")
def toy_table(tmp_path_factory) -> pd.DataFrame:
    return run_toy(tmp_path_factory.mktemp("toy"), seeds=(0, 1, 2)).set_index("variant")


def test_toy_reports_every_variant_and_switch(toy_table):
    assert list(toy_table.index) == list(TOY_VARIANTS)
    assert (toy_table["switches"] == 3 * (NUM_SEGMENTS - 1)).all()
    assert (toy_table["max_steps_to_recover"] <= SWITCH_EVERY).all()


def test_reset_at_switch_recovers_faster_than_sgd(toy_table):
    steps = toy_table["mean_steps_to_recover"]
    assert steps["reset_b0.15"] < steps["sgd_a0.05"]


def test_soft_reset_matches_or_beats_sgd(toy_table):
    steps = toy_table["mean_steps_to_recover"]
    assert steps["soft_reset"] <= steps["sgd_a0.05"]


def test_toy_values_match_the_frozen_run(toy_table):
    observed = toy_table[FROZEN_COLUMNS]
    if not FROZEN_TOY.exists():
        FROZEN_TOY.parent.mkdir(exist_ok=True)
        observed.to_csv(FROZEN_TOY)
        pytest.skip(f"recorded toy values to {FROZEN_TOY}")

    frozen = pd.read_csv(FROZEN_TOY, index_col="variant")
    assert list(frozen.index) == list(observed.index)
    pd.testing.assert_frame_equal(observed, frozen[FROZEN_COLUMNS], check_dtype=False, rtol=1e-6)


def test_toy_config_is_the_small_regression_setup():
    cfg = toy_config("x", OptimizerConfig(), seeds=[0])
    assert cfg.model.hidden_sizes == [5]
    assert cfg.stream.input_dim == 10
    assert cfg.stream.batch_size == 1
    assert cfg.stream.noise_std == 0.01


def test_recovery_steps_on_a_hand_built_trace():
    steps = list(range(2 * SWITCH_EVERY))
    # tracks -2 in the first segment, reaches +2 three steps after the switch
    prediction = [-2.0] * SWITCH_EVERY + [-2.0, 0.0, 1.0, 2.0] + [2.0] * (SWITCH_EVERY - 4)
    assert recovery_steps(pd.DataFrame({"step": steps, "prediction_mean": prediction})) == [3]


def test_failed_toy_variant_is_an_error(tmp_path):
    broken = {"diverging": OptimizerConfig(variant=Variant.ONLINE_SGD, alpha=1e300)}
    with pytest.raises(RuntimeError):
        run_toy(tmp_path, seeds=(0,), variants=broken)


def test_tracking_error_on_a_hand_built_trace():
    steps = list(range(2 * SWITCH_EVERY))
    # off by 1 for the first 10 steps of the second segment
    prediction = [-2.0] * SWITCH_EVERY + [1.0] * 10 + [2.0] * (SWITCH_EVERY - 10)
    frame = pd.DataFrame({"step": steps, "prediction_mean": prediction})
    assert tracking_error(frame) == pytest.approx(10 / (2 * SWITCH_EVERY))
