import gzip
import logging

import numpy as np

from pathlib import Path

from model.rng import lane
from streams import Dataset, IdxFormatError

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def _read_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _read_idx(path: Path, magic: int, dims: int) -> tuple[list[int], np.ndarray]:
    raw = _read_bytes(path)
    header_len = 4 * (1 + dims)
    if len(raw) < header_len:
        raise IdxFormatError(str(path), "truncated header")

    header = np.frombuffer(raw, dtype=">u4", count=1 + dims)
    if int(header[0]) != magic:
        raise IdxFormatError(str(path), f"unexpected magic 0x{int(header[0]):08x} (wanted 0x{magic:08x})")

    extents = [int(n) for n in header[1:]]
    expected = int(np.prod(extents))
    if len(raw) - header_len < expected:
        raise IdxFormatError(str(path), f"truncated: {len(raw) - header_len} of {expected} bytes")

    return extents, np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header_len)


def load_mnist_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Parse an IDX image/label file pair into inputs in [0, 1] and integer labels."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    (count, rows, cols), pixels = _read_idx(images_path, IMAGES_MAGIC, 3)
    (label_count,), labels = _read_idx(labels_path, LABELS_MAGIC, 1)

    if count != label_count:
        raise IdxFormatError(str(labels_path), f"count mismatch: {count} images, {label_count} labels")

    inputs = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    num_classes = max(int(labels.max()) + 1, 10) if count else 10

    return Dataset(inputs, labels, num_classes, (rows, cols))


class MnistExtractor:
    FILES = {
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    }

    def __init__(self, data_dir: str | Path = "./data/mnist", split: str = "train") -> None:
        data_dir = Path(data_dir)
        images, labels = (self._locate(data_dir, name) for name in self.FILES[split])
        self.data = load_mnist_idx(images, labels)
        logger.info("loaded IDX dataset", extra={"path": str(data_dir), "examples": len(self.data)})

    @staticmethod
    def _locate(data_dir: Path, name: str) -> Path:
        for candidate in (data_dir / name, data_dir / f"{name}.gz"):
            if candidate.exists():
                return candidate
        raise FileNotFoundError(f"{name}[.gz] not found in {data_dir}")

    @staticmethod
    def available(data_dir: str | Path) -> bool:
        data_dir = Path(data_dir)
        return all(
            (data_dir / name).exists() or (data_dir / f"{name}.gz").exists()
            for name in MnistExtractor.FILES["train"]
        )

    def subset(self, size: int, seed: int) -> Dataset:
        """Fixed random subset, drawn once per run and shared by every task."""
        return select_subset(self.data, size, seed)


def select_subset(ds: Dataset, size: int, seed: int) -> Dataset:
    if size >= len(ds):
        return ds
    index = np.sort(lane(seed, "subset").choice(len(ds), size=size, replace=False))
    return Dataset(ds.inputs[index], ds.labels[index], ds.num_classes, ds.image_shape)
