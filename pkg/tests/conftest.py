import gzip
import struct

import numpy as np
import pytest

from pathlib import Path

from drift import SharingMode
from drift.sharing import SharingScheme
from model import MlpSpec, TaskKind
from model.mlp import init_mlp
from model.rng import lane
from streams import Batch


def make_batch(inputs, targets, step: int = 0, task: int = 0, boundary: bool = False) -> Batch:
    return Batch(np.asarray(inputs, dtype=np.float64), np.asarray(targets), step, task, boundary)


def write_idx_images(path: Path, images: np.ndarray, magic: int = 0x00000803) -> Path:
    count, rows, cols = images.shape
    payload = struct.pack(">IIII", magic, count, rows, cols) + images.astype(np.uint8).tobytes()
    path.write_bytes(gzip.compress(payload) if path.suffix == ".gz" else payload)
    return path


def write_idx_labels(path: Path, labels: np.ndarray, magic: int = 0x00000801) -> Path:
    payload = struct.pack(">II", magic, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()
    path.write_bytes(gzip.compress(payload) if path.suffix == ".gz" else payload)
    return path


@pytest.fixture
def small_spec() -> MlpSpec:
    return MlpSpec((6, 8, 3), TaskKind.CLASSIFICATION)


@pytest.fixture
def small_net(small_spec):
    return init_mlp(small_spec, 0.1, seed=0)


@pytest.fixture
def small_batch() -> Batch:
    rng = lane(0, "tests", "batch")
    return make_batch(rng.standard_normal((4, 6)), rng.integers(0, 3, size=4))


@pytest.fixture
def per_layer(small_net) -> SharingScheme:
    params, _ = small_net
    return SharingScheme.build(SharingMode.PER_LAYER, params.groups)


@pytest.fixture
def bias_only():
    """(1, 1) regression net fed a zero input: the prediction is the output bias."""
    spec = MlpSpec((1, 1), TaskKind.REGRESSION)
    params, prior = init_mlp(spec, 0.1, seed=0)
    return params, prior


@pytest.fixture
def idx_dir(tmp_path) -> Path:
    images = np.array([[[0, 255], [128, 1]], [[10, 20], [30, 40]]], dtype=np.uint8)
    write_idx_images(tmp_path / "train-images-idx3-ubyte", images)
    write_idx_labels(tmp_path / "train-labels-idx1-ubyte", np.array([3, 7]))
    return tmp_path
