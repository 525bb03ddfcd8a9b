"""Pinhole intrinsics and pixel <-> normalized coordinate conversion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Intrinsics:
    fx: float = 400.0
    fy: float = 400.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def normalize(self, px) -> np.ndarray:
        px = np.asarray(px, dtype=float)
        return np.stack([(px[..., 0] - self.cx) / self.fx, (px[..., 1] - self.cy) / self.fy], -1)

    def denormalize(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.stack([xy[..., 0] * self.fx + self.cx, xy[..., 1] * self.fy + self.cy], -1)

    def contains(self, px, margin=0.0) -> np.ndarray:
        px = np.asarray(px, dtype=float)
        return ((px[..., 0] >= margin) & (px[..., 0] <= self.width - 1 - margin)
                & (px[..., 1] >= margin) & (px[..., 1] <= self.height - 1 - margin))
