import math

import numpy as np

from dataclasses import dataclass

from drift import SharingMode
from model.mlp import ParamGroup


@dataclass(frozen=True)
class SharingScheme:
    """Surjective map from flat parameter index to gamma cell."""

    mode: SharingMode
    cell_index: np.ndarray
    num_cells: int
    # contiguous parameter ranges per cell; None when every parameter is its own cell
    cell_slices: tuple[slice, ...] | None

    @classmethod
    def build(cls, mode: SharingMode, groups: tuple[ParamGroup, ...]) -> "SharingScheme":
        total = sum(g.length for g in groups)
        match SharingMode(mode):
            case SharingMode.GLOBAL:
                return cls(SharingMode.GLOBAL, np.zeros(total, dtype=np.int64), 1, (slice(0, total),))
            case SharingMode.PER_LAYER:
                index = np.concatenate([np.full(g.length, i, dtype=np.int64) for i, g in enumerate(groups)])
                return cls(SharingMode.PER_LAYER, index, len(groups), tuple(g.slice for g in groups))
            case SharingMode.PER_PARAMETER:
                return cls(SharingMode.PER_PARAMETER, np.arange(total, dtype=np.int64), total, None)

    def expand(self, per_cell: np.ndarray) -> np.ndarray:
        return np.asarray(per_cell, dtype=np.float64)[self.cell_index]

    def reduce(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.cell_index, weights=values, minlength=self.num_cells)

    def cell_sums(self, values: np.ndarray) -> np.ndarray:
        """Per-cell sums with compensated (fsum) accumulation."""
        if self.cell_slices is None:
            return np.array(values, dtype=np.float64)
        return np.array([math.fsum(values[s]) for s in self.cell_slices])

    def group_summary(self, per_cell: np.ndarray, groups: tuple[ParamGroup, ...]) -> dict[str, tuple[float, float]]:
        """(min, mean) of the per-parameter expansion over each parameter group."""
        expanded = self.expand(per_cell)
        return {g.label: (float(expanded[g.slice].min()), float(expanded[g.slice].mean())) for g in groups}
