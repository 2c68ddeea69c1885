import json

import numpy as np

from pathlib import Path

from model import MlpSpec, ModelError, TaskKind
from model.mlp import ParamSet


def save_checkpoint(path: str | Path, params: ParamSet, seed: int) -> Path:
    """Write `<path>.bin` (little-endian float64) and a `<path>.json` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params.values.astype("<f8").tofile(path.with_suffix(".bin"))

    sidecar = {
        "dtype": "<f8",
        "seed": seed,
        "spec": {
            "layer_sizes": list(params.spec.layer_sizes),
            "task_kind": params.spec.task_kind.value,
        },
        "groups": [
            {"label": g.label, "layer": g.layer, "kind": g.kind,
             "offset": g.offset, "length": g.length, "shape": list(g.shape)}
            for g in params.groups
        ],
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
    return path.with_suffix(".bin")


def load_checkpoint(path: str | Path) -> tuple[ParamSet, int]:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    spec = MlpSpec(tuple(sidecar["spec"]["layer_sizes"]), TaskKind(sidecar["spec"]["task_kind"]))

    values = np.fromfile(path.with_suffix(".bin"), dtype="<f8").astype(np.float64)
    if values.size != spec.num_params:
        raise ModelError(f"{path}: expected {spec.num_params} values, found {values.size}")

    params = ParamSet(spec, values)
    recorded = [(g["label"], g["offset"], g["length"]) for g in sidecar["groups"]]
    if recorded != [(g.label, g.offset, g.length) for g in params.groups]:
        raise ModelError(f"{path}: group table does not match the layout of {spec.layer_sizes}")

    return params, int(sidecar["seed"])
