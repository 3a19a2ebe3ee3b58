"""Depth map container shared by losses, evaluation and file I/O."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class DepthMap:
    """``H x W`` depths in millimetres with a boolean validity mask."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 2 or self.mask.shape != self.values.shape:
            raise ValueError(
                f"depth map needs matching 2-D values/mask, got {self.values.shape} / {self.mask.shape}")

    @classmethod
    def from_values(cls, values, mask: Optional[np.ndarray] = None) -> "DepthMap":
        """Valid wherever the value is finite and strictly positive (and ``mask`` allows)."""
        values = np.asarray(values, dtype=np.float64)
        valid = np.isfinite(values) & (values > 0)
        if mask is not None:
            valid &= np.asarray(mask, dtype=bool)
        return cls(values, valid)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())

    def scaled(self, factor: float) -> "DepthMap":
        return DepthMap(self.values * factor, self.mask.copy())


def as_depthmap(x) -> DepthMap:
    return x if isinstance(x, DepthMap) else DepthMap.from_values(x)
