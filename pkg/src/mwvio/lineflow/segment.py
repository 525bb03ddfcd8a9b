from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AXIS_NAMES = ("X", "Y", "Z")
SAMPLE_SPACING = 2.0


@dataclass
class LineSegment2D:
    """Image line segment in pixels. ``axis`` is 0/1/2 for X/Y/Z, or None."""

    start: np.ndarray
    end: np.ndarray
    id: int = -1
    axis: int | None = None

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float).reshape(2)
        self.end = np.asarray(self.end, dtype=float).reshape(2)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def direction(self) -> np.ndarray:
        v = self.end - self.start
        return v / max(np.linalg.norm(v), 1e-12)

    @property
    def normal(self) -> np.ndarray:
        d = self.direction
        return np.array([-d[1], d[0]])

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.start + self.end)

    @property
    def samples(self) -> np.ndarray:
        return sample_points(self.start, self.end)

    def copy(self, **changes) -> "LineSegment2D":
        kw = dict(start=self.start.copy(), end=self.end.copy(), id=self.id, axis=self.axis)
        kw.update(changes)
        return LineSegment2D(**kw)


def sample_points(start, end, spacing=SAMPLE_SPACING) -> np.ndarray:
    """Ordered points from start to end (both included) at about ``spacing`` px."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    n = max(int(np.ceil(np.linalg.norm(end - start) / spacing)), 1) + 1
    s = np.linspace(0.0, 1.0, n)[:, None]
    return start + s * (end - start)
