import copy
import itertools
import json
import logging

import jsonschema

from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError

from bench import ConfigError
from model import PriorMeanMode
from optim.config import OptimizerConfig
from streams.spec import StreamSpec

logger = logging.getLogger(__name__)


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # input and output widths come from the stream
    hidden_sizes: list[PositiveInt] = Field(default_factory=lambda: [256, 256, 256, 256])
    prior_mean: PriorMeanMode = PriorMeanMode.SPECIFIC_INIT


class MetricOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    progress: bool = False
    checkpoint: bool = False
    flush_every: int = Field(100, ge=1)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    stream: StreamSpec = Field(default_factory=StreamSpec)
    model: ModelConfig = Field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    metrics: MetricOptions = Field(default_factory=MetricOptions)
    output_dir: str | None = None
    data_dir: str | None = None
    synthetic: bool = False

    def serialized(self) -> str:
        """Canonical JSON used for tie-breaking and run identity."""
        return json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True)


def config_schema() -> dict[str, Any]:
    return ExperimentConfig.model_json_schema()


def parse_config(raw: dict[str, Any]) -> ExperimentConfig:
    try:
        jsonschema.validate(raw, config_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from exc

    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw)


def _set_dotted(doc: dict[str, Any], dotted: str, value: Any) -> None:
    *parents, leaf = dotted.split(".")
    for key in parents:
        doc = doc.setdefault(key, {})
    doc[leaf] = value


def expand_grid(grid_doc: dict[str, Any]) -> list[ExperimentConfig]:
    """Cartesian product of `grid` (dotted path -> values) applied over `base`, in key order."""
    base = grid_doc.get("base", {})
    grid = grid_doc.get("grid", {})
    if not grid or any(not values for values in grid.values()):
        raise ConfigError("sweep grid is empty")

    configs = []
    keys = list(grid)
    for combo in itertools.product(*(grid[k] for k in keys)):
        raw = copy.deepcopy(base)
        for key, value in zip(keys, combo):
            _set_dotted(raw, key, value)
        label = ",".join(f"{k}={v}" for k, v in zip(keys, combo))
        raw["name"] = f"{base.get('name', 'sweep')}[{label}]"
        configs.append(parse_config(raw))

    logger.info("expanded sweep grid", extra={"points": len(configs), "keys": keys})
    return configs


def load_grid(path: str | Path) -> list[ExperimentConfig]:
    path = Path(path)
    try:
        return expand_grid(json.loads(path.read_text()))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
