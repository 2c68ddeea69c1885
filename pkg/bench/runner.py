import json
import logging
import math
import os
import time

import numpy as np
import pandas as pd

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from tqdm import tqdm

from bench import (
    DEFAULT_DATA_DIR,
    DEFAULT_MAX_WORKERS,
    DEFAULT_OUT_DIR,
    METRICS_FILE,
    METRICS_SCHEMA,
    SUMMARY_FILE,
    SWEEP_FILE,
    SYNTHETIC_CLASSES,
    SYNTHETIC_FEATURES,
    ConfigError,
)
from bench.config import ExperimentConfig
from bench.metrics import (
    boundary_gamma_contrast,
    gamma_columns,
    online_accuracy,
    overall_accuracy,
    run_error,
    task_table,
    task_weighted_error,
)
from model import MlpSpec, TaskKind
from model.checkpoint import save_checkpoint
from model.mlp import group_layout
from optim import BOUNDARY_AWARE
from optim.learner import Learner, StepReport
from streams import Batch, Dataset, StreamKind
from streams.generators import input_width, make_stream, stream_length, synthetic_fallback_dataset
from streams.mnist_extractor import MnistExtractor
from streams.spec import StreamSpec

logger = logging.getLogger(__name__)


def metrics_columns(spec: MlpSpec) -> list[str]:
    columns = ["schema", "seed", "step", "task", "boundary", "accuracy", "sq_error", "prediction_mean", "loss"]
    for group in group_layout(spec):
        columns += [f"gamma_min_{group.label}", f"gamma_mean_{group.label}"]
    return columns + ["lr_mean"]


def metrics_row(seed: int, batch: Batch, outputs: np.ndarray, task_kind: TaskKind, report: StepReport,
                columns: list[str]) -> dict[str, Any]:
    row = dict.fromkeys(columns, None)
    row.update(schema=METRICS_SCHEMA, seed=seed, step=batch.step, task=batch.task, boundary=batch.boundary,
               loss=report.loss, lr_mean=report.lr_mean)

    score = online_accuracy(outputs, batch.targets, task_kind)
    if task_kind == TaskKind.CLASSIFICATION:
        row["accuracy"] = score
    else:
        row["sq_error"] = score
        row["prediction_mean"] = float(np.mean(outputs))

    for label, (low, mean) in (report.gamma or {}).items():
        row[f"gamma_min_{label}"] = low
        row[f"gamma_mean_{label}"] = mean
    return row


class MetricsWriter:
    """Buffered, append-only CSV writer for one seed."""

    def __init__(self, path: Path, columns: list[str], flush_every: int = 100) -> None:
        self.path = path
        self.columns = columns
        self.flush_every = flush_every
        self.rows: list[dict[str, Any]] = []
        self.header_written = False
        path.parent.mkdir(parents=True, exist_ok=True)
        path.unlink(missing_ok=True)

    def append(self, row: dict[str, Any]) -> None:
        self.rows.append(row)
        if len(self.rows) >= self.flush_every:
            self.flush()

    def flush(self) -> None:
        if not self.rows and self.header_written:
            return
        frame = pd.DataFrame(self.rows, columns=self.columns)
        frame.to_csv(self.path, mode="a", header=not self.header_written, index=False)
        self.header_written = True
        self.rows = []


@dataclass
class SeedResult:
    seed: int
    status: str
    steps: int
    csv_path: str
    error: str | None = None
    per_task: dict[int, float] = field(default_factory=dict)
    overall: float | None = None
    cumulative_error: float | None = None
    error_identity: bool | None = None
    min_gamma: dict[str, float] | None = None
    boundary_gamma: float | None = None
    mid_task_gamma: float | None = None
    wall_clock_per_step: float | None = None


def output_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir or Path(os.getenv("SOFTRESET_OUT_DIR", DEFAULT_OUT_DIR)) / cfg.name)


def load_dataset(cfg: ExperimentConfig) -> Dataset | None:
    """IDX files when present (and not overridden by `synthetic`), else the synthetic fallback."""
    spec = cfg.stream
    if spec.kind == StreamKind.MEAN_TRACKING:
        return None

    data_dir = cfg.data_dir or os.getenv("SOFTRESET_DATA_DIR", DEFAULT_DATA_DIR)
    if not cfg.synthetic and MnistExtractor.available(data_dir):
        return MnistExtractor(data_dir).subset(spec.subset_size, spec.seed)

    if not cfg.synthetic:
        logger.warning("IDX files not found, using synthetic fallback", extra={"path": str(data_dir)})
    return synthetic_fallback_dataset(spec.subset_size, SYNTHETIC_CLASSES, SYNTHETIC_FEATURES, spec.seed)


def build_mlp_spec(cfg: ExperimentConfig, ds: Dataset | None) -> MlpSpec:
    if cfg.stream.kind == StreamKind.MEAN_TRACKING:
        return MlpSpec((cfg.stream.input_dim, *cfg.model.hidden_sizes, 1), TaskKind.REGRESSION)
    return MlpSpec((input_width(cfg.stream, ds), *cfg.model.hidden_sizes, ds.num_classes), TaskKind.CLASSIFICATION)


def seed_stream_spec(spec: StreamSpec, seed: int) -> StreamSpec:
    """The stream of run seed `s` uses StreamSpec.seed + s."""
    return spec.model_copy(update={"seed": spec.seed + seed})


def summarize_seed(result: SeedResult, frame: pd.DataFrame, regression: bool) -> SeedResult:
    if frame.empty:
        return result

    table = task_table(frame)
    result.per_task = {int(t): float(s) for t, s in zip(table["task"], table["score"])}
    result.overall = overall_accuracy(table["score"].tolist())
    result.cumulative_error = run_error(frame)
    result.error_identity = math.isclose(result.cumulative_error, task_weighted_error(table, regression),
                                         rel_tol=1e-12, abs_tol=1e-9)

    min_cols = gamma_columns(frame, "min")
    if min_cols and frame[min_cols].notna().any().any():
        result.min_gamma = {c.removeprefix("gamma_min_"): float(frame[c].min()) for c in min_cols}
        contrast = boundary_gamma_contrast(frame)
        if contrast is not None:
            result.boundary_gamma, result.mid_task_gamma = contrast
    return result


def run_seed(cfg: ExperimentConfig, seed: int, ds: Dataset | None, out_dir: Path) -> SeedResult:
    stream_spec = seed_stream_spec(cfg.stream, seed)
    spec = build_mlp_spec(cfg, ds)
    columns = metrics_columns(spec)
    csv_path = out_dir / f"seed_{seed}" / METRICS_FILE
    writer = MetricsWriter(csv_path, columns, cfg.metrics.flush_every)
    result = SeedResult(seed=seed, status="ok", steps=0, csv_path=str(csv_path))
    boundary_aware = cfg.optimizer.variant in BOUNDARY_AWARE

    logger.info("seed started", extra={"seed": seed, "variant": cfg.optimizer.variant.value, "run": cfg.name})
    wall_clock = 0.0
    learner = None
    try:
        learner = Learner(spec, cfg.optimizer, seed, cfg.model.prior_mean)
        stream = make_stream(stream_spec, ds)
        total = stream_length(stream_spec, ds)
        for batch in tqdm(stream, total=total, desc=f"{cfg.name} seed {seed}", disable=not cfg.metrics.progress):
            outputs, loss = learner.evaluate(batch)
            report = learner.step(batch if boundary_aware else batch.without_boundary(), loss=loss)
            wall_clock += report.wall_clock
            writer.append(metrics_row(seed, batch, outputs, spec.task_kind, report, columns))
            result.steps += 1

            if batch.boundary and report.gamma is not None:
                logger.info("task boundary", extra={
                    "seed": seed, "step": batch.step, "task": batch.task,
                    "gamma_min": {k: v[0] for k, v in report.gamma.items()},
                })
    except Exception as exc:
        result.status = "failed"
        result.error = f"{type(exc).__name__}: {exc}"
        logger.error("seed aborted", extra={"seed": seed, "step": result.steps, "error": result.error})
    finally:
        writer.flush()

    if cfg.metrics.checkpoint and learner is not None:
        save_checkpoint(out_dir / f"seed_{seed}" / "params", learner.mean_params, seed)

    result.wall_clock_per_step = wall_clock / result.steps if result.steps else None
    if result.steps:
        summarize_seed(result, pd.read_csv(csv_path), spec.task_kind == TaskKind.REGRESSION)

    logger.info("seed finished", extra={"seed": seed, "status": result.status, "steps": result.steps,
                                        "wall_clock": wall_clock, "overall": result.overall})
    return result


def _mean_std(values: list[float]) -> dict[str, float | None]:
    series = pd.Series(values, dtype=float)
    std = series.std()
    return {"mean": float(series.mean()), "std": None if math.isnan(std) else float(std)}


def aggregate(results: list[SeedResult]) -> dict[str, Any]:
    done = [r for r in results if r.status == "ok" and r.overall is not None]
    if not done:
        return {}

    tasks = sorted(set.intersection(*(set(r.per_task) for r in done)))
    return {
        "overall": _mean_std([r.overall for r in done]),
        "cumulative_error": _mean_std([r.cumulative_error for r in done]),
        "per_task": {str(t): _mean_std([r.per_task[t] for r in done]) for t in tasks},
    }


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    out_dir: Path
    seeds: list[SeedResult]
    summary: dict[str, Any]

    @property
    def ok(self) -> bool:
        return all(r.status == "ok" for r in self.seeds)

    @property
    def mean_cumulative_error(self) -> float:
        aggregate = self.summary.get("aggregate") or {}
        if not self.ok or "cumulative_error" not in aggregate:
            return math.inf
        return aggregate["cumulative_error"]["mean"]


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_jsonable(v) for v in value]
    return value


def run_experiment(cfg: ExperimentConfig, out_dir: Path | None = None) -> ExperimentResult:
    """Run every seed of `cfg`, writing one metrics CSV per seed and a summary JSON."""
    out_dir = Path(out_dir) if out_dir is not None else output_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    ds = load_dataset(cfg)
    results = [run_seed(cfg, seed, ds, out_dir) for seed in cfg.seeds]

    summary = {
        "schema": METRICS_SCHEMA,
        "name": cfg.name,
        "variant": cfg.optimizer.variant.value,
        "config": json.loads(cfg.serialized()),
        "seeds": [vars(r) for r in results],
        "aggregate": aggregate(results),
        "wall_clock": time.perf_counter() - started,
    }
    (out_dir / SUMMARY_FILE).write_text(json.dumps(_jsonable(summary), indent=2))
    return ExperimentResult(cfg, out_dir, results, summary)


@dataclass
class SweepResult:
    best: dict[str, ExperimentConfig]
    table: pd.DataFrame

    @property
    def ok(self) -> bool:
        return bool(self.best) and bool((self.table["status"] == "ok").all())


def sweep(configs: list[ExperimentConfig],
          out_dir: Path,
          max_workers: int | None = None,
          budget: int | None = None) -> "SweepResult":
    """Run a config grid and pick, per variant, the point with the smallest mean cumulative error.

    Ties go to the lexicographically smaller config serialization. `budget`
    caps the number of grid points run, taken in grid order.
    """
    if not configs:
        raise ConfigError("sweep needs at least one config")
    if budget is not None:
        configs = configs[:budget]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    max_workers = max_workers or int(os.getenv("SOFTRESET_MAX_WORKERS", DEFAULT_MAX_WORKERS))
    results: dict[int, ExperimentResult] = {}

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        future_to_index = {
            pool.submit(run_experiment, cfg, out_dir / f"point_{index:03d}"): index
            for index, cfg in enumerate(configs)
        }
        for fut in as_completed(future_to_index):
            index = future_to_index[fut]
            try:
                results[index] = fut.result()
            except Exception as exc:
                logger.error("sweep point failed", extra={"point": index, "error": str(exc)})

    rows = []
    for index, cfg in enumerate(configs):
        result = results.get(index)
        rows.append({
            "point": index,
            "name": cfg.name,
            "variant": cfg.optimizer.variant.value,
            "status": "ok" if result is not None and result.ok else "failed",
            "cumulative_error": result.mean_cumulative_error if result is not None else math.inf,
            "config": cfg.serialized(),
        })
    table = pd.DataFrame(rows)
    table.to_csv(out_dir / SWEEP_FILE, index=False)

    best = {}
    for variant, group in table[table["status"] == "ok"].groupby("variant", sort=True):
        winner = group.sort_values(["cumulative_error", "config"]).iloc[0]
        best[variant] = configs[int(winner["point"])]
        logger.info("sweep selection", extra={"variant": variant, "run": winner["name"],
                                              "cumulative_error": float(winner["cumulative_error"])})

    (out_dir / "best.json").write_text(json.dumps(
        {variant: json.loads(cfg.serialized()) for variant, cfg in best.items()}, indent=2))
    return SweepResult(best, table)
