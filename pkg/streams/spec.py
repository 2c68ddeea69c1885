from pydantic import BaseModel, ConfigDict, Field

from streams import StreamKind


class StreamSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: StreamKind = StreamKind.RANDOM_LABEL
    subset_size: int = Field(10000, gt=0)
    num_tasks: int = Field(10, gt=0)
    epochs_per_task: int = Field(400, gt=0)
    batch_size: int = Field(128, gt=0)
    # label_noise: share of images relabelled uniformly at random within a task
    noise_fraction: float = 0.2
    # side of the square random crop; None picks 24 for 28x28 images when auto_crop is on
    crop: int | None = Field(None, gt=0)
    auto_crop: bool = True
    identity_first_task: bool = False
    # mean_tracking only
    switch_every: int = Field(50, gt=0)
    noise_std: float = Field(0.01, ge=0)
    input_dim: int = Field(10, gt=0)
    seed: int = Field(0, ge=0)
