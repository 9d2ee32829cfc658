"""Three-way soft labels shared by the perception and loss modules.

Both perception heads classify into the same three categories; the
index order (left, center, right) is fixed here and relied on
everywhere probabilities are stored as arrays.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Category", "SoftLabel3"]


class Category(enum.IntEnum):
    """Trail-relative class: which way the vehicle is displaced or aimed."""

    LEFT = 0
    CENTER = 1
    RIGHT = 2

    def opposite(self) -> "Category":
        if self is Category.LEFT:
            return Category.RIGHT
        if self is Category.RIGHT:
            return Category.LEFT
        return Category.CENTER


@dataclass(frozen=True)
class SoftLabel3:
    """Probability triple over (left, center, right).

    Components must lie in [0, 1] and sum to 1 within 1e-9.
    """

    p_left: float
    p_center: float
    p_right: float

    def __post_init__(self) -> None:
        for v in (self.p_left, self.p_center, self.p_right):
            if not (math.isfinite(v) and -1e-12 <= v <= 1.0 + 1e-12):
                raise ValueError(f"probabilities must lie in [0, 1], got {v}")
        total = self.p_left + self.p_center + self.p_right
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1 within 1e-9, got {total}")

    @classmethod
    def uniform(cls) -> "SoftLabel3":
        return cls(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)

    @classmethod
    def from_array(cls, probs) -> "SoftLabel3":
        p = np.asarray(probs, dtype=float)
        if p.shape != (3,):
            raise ValueError(f"expected 3 probabilities, got shape {p.shape}")
        return cls(float(p[0]), float(p[1]), float(p[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.p_left, self.p_center, self.p_right])

    def argmax(self) -> Category:
        return Category(int(np.argmax(self.as_array())))

    def swapped(self) -> "SoftLabel3":
        """Left/right mirror of the label."""
        return SoftLabel3(self.p_right, self.p_center, self.p_left)
