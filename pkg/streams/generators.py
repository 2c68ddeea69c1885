import numpy as np

from typing import Iterator

from model.rng import lane
from streams import Batch, Dataset, StreamError, StreamKind
from streams.spec import StreamSpec

DEFAULT_CROPS = {(28, 28): 24, (32, 32): 28}


def effective_crop(spec: StreamSpec, ds: Dataset | None) -> int | None:
    if spec.crop is not None:
        return spec.crop
    if spec.auto_crop and ds is not None and ds.image_shape is not None:
        return DEFAULT_CROPS.get(tuple(ds.image_shape))
    return None


def input_width(spec: StreamSpec, ds: Dataset | None) -> int:
    if spec.kind == StreamKind.MEAN_TRACKING:
        return spec.input_dim
    crop = effective_crop(spec, ds)
    return crop * crop if crop else ds.num_features


def stream_length(spec: StreamSpec, ds: Dataset | None) -> int:
    if spec.kind == StreamKind.MEAN_TRACKING:
        return spec.num_tasks * spec.switch_every
    n = min(spec.subset_size, len(ds))
    per_epoch = -(-n // spec.batch_size)
    return spec.num_tasks * spec.epochs_per_task * per_epoch


def _crop(inputs: np.ndarray, image_shape: tuple[int, int] | None, size: int | None,
          rng: np.random.Generator) -> np.ndarray:
    """Uniformly placed size x size sub-window, the same offset for the whole batch."""
    if size is None:
        return inputs
    if image_shape is None:
        raise StreamError("random crop needs image-shaped inputs")
    rows, cols = image_shape
    if size > min(rows, cols):
        raise StreamError(f"crop {size} larger than image {image_shape}")
    top = int(rng.integers(0, rows - size + 1))
    left = int(rng.integers(0, cols - size + 1))
    images = inputs.reshape(-1, rows, cols)[:, top:top + size, left:left + size]
    return images.reshape(len(inputs), size * size)


def _task_batches(spec: StreamSpec,
                  ds: Dataset,
                  task: int,
                  inputs: np.ndarray,
                  labels: np.ndarray,
                  first_step: int) -> Iterator[Batch]:
    crop = effective_crop(spec, ds)
    step = first_step
    for epoch in range(spec.epochs_per_task):
        order = lane(spec.seed, "order", task, epoch).permutation(len(labels))
        for b, start in enumerate(range(0, len(labels), spec.batch_size)):
            index = order[start:start + spec.batch_size]
            crop_rng = lane(spec.seed, "crop", task, epoch, b)
            yield Batch(
                inputs=_crop(inputs[index], ds.image_shape, crop, crop_rng),
                targets=labels[index],
                step=step,
                task=task,
                boundary=(epoch == 0 and b == 0),
            )
            step += 1


def make_random_label_stream(ds: Dataset, spec: StreamSpec) -> Iterator[Batch]:
    """Every task draws a fresh uniform label per image, fixed for the task."""
    step = 0
    for task in range(spec.num_tasks):
        labels = lane(spec.seed, "labels", task).integers(0, ds.num_classes, size=len(ds))
        for batch in _task_batches(spec, ds, task, ds.inputs, labels, step):
            yield batch
            step += 1


def task_permutation(spec: StreamSpec, task: int, num_features: int) -> np.ndarray:
    if task == 0 and spec.identity_first_task:
        return np.arange(num_features)
    return lane(spec.seed, "perm", task).permutation(num_features)


def make_permuted_stream(ds: Dataset, spec: StreamSpec) -> Iterator[Batch]:
    """Every task applies one fresh pixel permutation to all images."""
    step = 0
    for task in range(spec.num_tasks):
        permuted = ds.inputs[:, task_permutation(spec, task, ds.num_features)]
        for batch in _task_batches(spec, ds, task, permuted, ds.labels, step):
            yield batch
            step += 1


def make_label_noise_stream(ds: Dataset, spec: StreamSpec) -> Iterator[Batch]:
    """Every task relabels a fixed random share of images; the rest keep true labels."""
    if not 0.0 <= spec.noise_fraction <= 1.0:
        raise StreamError(f"noise_fraction must lie in [0, 1], got {spec.noise_fraction}")

    step = 0
    n_noisy = int(round(spec.noise_fraction * len(ds)))
    for task in range(spec.num_tasks):
        rng = lane(spec.seed, "noise", task)
        labels = ds.labels.copy()
        noisy = rng.choice(len(ds), size=n_noisy, replace=False)
        labels[noisy] = rng.integers(0, ds.num_classes, size=n_noisy)
        for batch in _task_batches(spec, ds, task, ds.inputs, labels, step):
            yield batch
            step += 1


def mean_schedule(step: int, switch_every: int) -> float:
    return -2.0 if (step // switch_every) % 2 == 0 else 2.0


def make_mean_tracking_stream(spec: StreamSpec) -> Iterator[Batch]:
    """y_t = mu_t + sigma * eps with mu_t alternating -2 / +2 every `switch_every` steps."""
    rng = lane(spec.seed, "mean_tracking")
    for step in range(spec.num_tasks * spec.switch_every):
        mu = mean_schedule(step, spec.switch_every)
        targets = mu + spec.noise_std * rng.standard_normal((spec.batch_size, 1))
        yield Batch(
            inputs=np.ones((spec.batch_size, spec.input_dim)),
            targets=targets,
            step=step,
            task=step // spec.switch_every,
            boundary=step % spec.switch_every == 0,
        )


def synthetic_fallback_dataset(num_examples: int, num_classes: int, features: int, seed: int) -> Dataset:
    """Balanced classes: a one-hot class block plus uniform nuisance features.

    The nuisance features make every example distinct, so random labels can
    be memorised.

    Scoring with w_k = e_k separates the classes with functional margin 1.
    """
    if num_examples <= 0 or num_classes <= 0 or features < num_classes:
        raise StreamError(f"invalid synthetic sizes: n={num_examples}, classes={num_classes}, features={features}")

    rng = lane(seed, "synthetic")
    labels = rng.permutation(np.arange(num_examples) % num_classes)
    inputs = np.zeros((num_examples, features))
    inputs[np.arange(num_examples), labels] = 1.0
    nuisance = features - num_classes
    inputs[:, num_classes:] = rng.uniform(0.0, 1.0, (num_examples, nuisance))

    return Dataset(inputs, labels.astype(np.int64), num_classes, None)


def make_stream(spec: StreamSpec, ds: Dataset | None) -> Iterator[Batch]:
    match spec.kind:
        case StreamKind.RANDOM_LABEL:
            return make_random_label_stream(ds, spec)
        case StreamKind.PERMUTED:
            return make_permuted_stream(ds, spec)
        case StreamKind.LABEL_NOISE:
            return make_label_noise_stream(ds, spec)
        case StreamKind.MEAN_TRACKING:
            return make_mean_tracking_stream(spec)
        case _:
            raise StreamError(f"unknown stream kind: {spec.kind}")
