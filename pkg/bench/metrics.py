import math

import numpy as np
import pandas as pd

from typing import Sequence

from model import TaskKind


def online_accuracy(prediction: np.ndarray, target: np.ndarray,
                    task_kind: TaskKind = TaskKind.CLASSIFICATION) -> float:
    """Batch-averaged 0/1 correctness, or mean squared error for regression.

    `prediction` is the network output computed before the update: logits
    (rows x classes) or predicted labels for classification.
    """
    prediction, target = np.asarray(prediction), np.asarray(target)
    match task_kind:
        case TaskKind.CLASSIFICATION:
            labels = prediction.argmax(axis=1) if prediction.ndim == 2 else prediction
            return float(np.mean(labels == target))
        case TaskKind.REGRESSION:
            return float(np.mean((prediction.reshape(-1) - target.reshape(-1)) ** 2))


def per_task_accuracy(accuracies: Sequence[float]) -> float:
    if len(accuracies) == 0:
        raise ValueError("per_task_accuracy: task has no steps")
    return math.fsum(accuracies) / len(accuracies)


def overall_accuracy(per_task: Sequence[float]) -> float:
    if len(per_task) == 0:
        raise ValueError("overall_accuracy: need at least one task")
    return math.fsum(per_task) / len(per_task)


def cumulative_error(accuracies: Sequence[float]) -> float:
    return math.fsum(1.0 - a for a in accuracies)


def step_errors(frame: pd.DataFrame) -> pd.Series:
    """1 - accuracy for classification rows, squared error for regression rows."""
    if frame["accuracy"].notna().any():
        return 1.0 - frame["accuracy"]
    return frame["sq_error"]


def metric_column(frame: pd.DataFrame) -> str:
    return "accuracy" if frame["accuracy"].notna().any() else "sq_error"


def task_table(frame: pd.DataFrame) -> pd.DataFrame:
    """Per task: number of steps and A_t (mean online accuracy, or mean squared error)."""
    column = metric_column(frame)
    table = frame.groupby("task", sort=True)[column].agg(
        steps="size",
        score=lambda values: per_task_accuracy(values.tolist()),
    )
    return table.reset_index()


def run_error(frame: pd.DataFrame) -> float:
    return math.fsum(step_errors(frame).tolist())


def task_weighted_error(table: pd.DataFrame, regression: bool = False) -> float:
    """sum_t len_t * (1 - A_t); for regression sum_t len_t * A_t."""
    per_task = table["score"] if regression else 1.0 - table["score"]
    return math.fsum((table["steps"] * per_task).tolist())


def gamma_columns(frame: pd.DataFrame, stat: str) -> list[str]:
    return [c for c in frame.columns if c.startswith(f"gamma_{stat}_")]


def boundary_gamma_contrast(frame: pd.DataFrame, window: int = 5) -> tuple[float, float] | None:
    """(gamma over `window` steps after each boundary, gamma over mid-task windows).

    Both sides use the per-step mean over groups of the per-group min gamma.
    The first task start is not a change point and is skipped. Steps where
    any group has no gamma are left out; None when either side is empty.
    """
    min_cols = gamma_columns(frame, "min")
    if not min_cols:
        return None

    per_step = frame[min_cols].mean(axis=1, skipna=False).to_numpy()
    starts = frame.index[frame["boundary"].astype(bool)].tolist()
    ends = starts[1:] + [len(frame)]

    after, middle = [], []
    for start, end in zip(starts, ends):
        if start > 0:
            after.extend(per_step[start:min(start + window, end)])
        centre = start + (end - start) // 2
        middle.extend(per_step[max(centre - window // 2, start):min(centre + window // 2 + 1, end)])

    after, middle = np.asarray(after), np.asarray(middle)
    after, middle = after[np.isfinite(after)], middle[np.isfinite(middle)]
    if not after.size or not middle.size:
        return None
    return float(after.mean()), float(middle.mean())


def steps_to_recover(prediction: Sequence[float],
                     target_mean: Sequence[float],
                     switch_steps: Sequence[int],
                     threshold: float = 0.2,
                     cap: int | None = None) -> list[int]:
    """Steps after each switch until |prediction - mean| < threshold; `cap` if never."""
    prediction, target_mean = np.asarray(prediction), np.asarray(target_mean)
    bounds = list(switch_steps) + [len(prediction)]
    recovered = []
    for start, end in zip(bounds[:-1], bounds[1:]):
        limit = cap if cap is not None else end - start
        close = np.flatnonzero(np.abs(prediction[start:end] - target_mean[start:end]) < threshold)
        recovered.append(int(min(close[0], limit)) if close.size else limit)
    return recovered
