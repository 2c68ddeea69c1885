import zlib

import numpy as np


def lane(seed: int, *keys: int | str) -> np.random.Generator:
    """Counter-based random stream addressed by (seed, keys...).

    Lanes with different keys are independent, so the draws of one
    component never depend on how many numbers another component consumed.
    """
    spawn_key = tuple(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=spawn_key)))
