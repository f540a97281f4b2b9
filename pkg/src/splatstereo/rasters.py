"""Per-pixel float rasters with validity masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class _MaskedRaster:
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape:
            raise ValueError(f"values {self.values.shape} and mask {self.valid.shape} differ in shape")
        # keep the invariant: valid pixels are finite and positive
        self.valid &= np.isfinite(self.values) & (self.values > 0)

    @property
    def shape(self):
        return self.values.shape

    def filled(self, fill=0.0) -> np.ndarray:
        return np.where(self.valid, self.values, fill)


@dataclass(eq=False)
class DepthMap(_MaskedRaster):
    """z-depth in world units.

    ``unnormalized`` optionally holds the raw front-to-back accumulation of
    depth before division by alpha (splat renders only).
    """

    unnormalized: np.ndarray | None = None


@dataclass(eq=False)
class DisparityMap(_MaskedRaster):
    """Left-view disparity in pixels."""


@dataclass(eq=False)
class AlphaMap:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.size and (self.values.min() < 0 or self.values.max() > 1):
            raise ValueError("alpha values must lie in [0, 1]")


@dataclass(eq=False)
class ObservabilityMap:
    """Per-pixel observability; ``valid`` marks pixels whose ray hit the mesh."""

    values: np.ndarray
    valid: np.ndarray
