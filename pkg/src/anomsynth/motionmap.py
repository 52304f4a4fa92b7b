"""Binary map of every pixel that has shown foreground motion at least once."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import maskops
from .errors import ContractError
from .frameio import read_mask, write_mask


@dataclass
class MotionMap:
    width: int
    height: int
    seen: np.ndarray = field(default=None, repr=False)
    frames_absorbed: int = 0

    def __post_init__(self):
        if self.seen is None:
            self.seen = np.zeros((self.height, self.width), dtype=bool)
        elif self.seen.shape != (self.height, self.width):
            raise ContractError("seen has the wrong shape")

    def absorb(self, mask: np.ndarray) -> "MotionMap":
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != self.seen.shape:
            raise ContractError(f"mask shape {mask.shape} does not match map {self.seen.shape}")
        self.seen |= mask
        self.frames_absorbed += 1
        return self

    def eligible_mask(self, vicinity_radius: int) -> np.ndarray:
        if vicinity_radius < 0:
            raise ContractError("vicinity_radius must be >= 0")
        if vicinity_radius == 0:
            return self.seen.copy()
        return maskops.dilate(self.seen, vicinity_radius)

    def eligible_pixels(self, vicinity_radius: int) -> set[tuple[int, int]]:
        ys, xs = np.nonzero(self.eligible_mask(vicinity_radius))
        return set(zip(xs.tolist(), ys.tolist()))

    def save(self, path) -> None:
        write_mask(self.seen, path)

    @classmethod
    def load(cls, path, frames_absorbed: int = 0) -> "MotionMap":
        seen = read_mask(path)
        return cls(seen.shape[1], seen.shape[0], seen, frames_absorbed)


def absorb(mm: MotionMap, mask: np.ndarray) -> MotionMap:
    return mm.absorb(mask)


def eligible_pixels(mm: MotionMap, vicinity_radius: int) -> set[tuple[int, int]]:
    return mm.eligible_pixels(vicinity_radius)


def default_vicinity(width: int, height: int) -> int:
    """2% of the frame diagonal."""
    return int(round(0.02 * math.hypot(width, height)))
