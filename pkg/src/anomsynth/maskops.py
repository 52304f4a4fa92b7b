"""Morphology, connected components and area filtering for boolean masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ContractError


@dataclass(frozen=True, eq=False)
class Blob:
    """An 8-connected foreground component with its tight bounding box."""

    x: int
    y: int
    w: int
    h: int
    mask: np.ndarray  # (h, w) bool, cropped to the bbox

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))

    def centroid_offset(self) -> tuple[int, int]:
        """Rounded mask centroid relative to the bbox origin."""
        ys, xs = np.nonzero(self.mask)
        return int(np.floor(xs.mean() + 0.5)), int(np.floor(ys.mean() + 0.5))

    def __eq__(self, other):
        if not isinstance(other, Blob):
            return NotImplemented
        return self.bbox == other.bbox and np.array_equal(self.mask, other.mask)

    def __repr__(self):
        return f"Blob(bbox={self.bbox}, area={self.area})"


def _shift_or(mask: np.ndarray, r: int) -> np.ndarray:
    """Dilation by a (2r+1)^2 square; pixels beyond the border count as background."""
    H, W = mask.shape
    padded = np.zeros((H + 2 * r, W + 2 * r), dtype=bool)
    padded[r:r + H, r:r + W] = mask
    # separable: rows then columns
    rows = np.zeros((H + 2 * r, W), dtype=bool)
    for dx in range(2 * r + 1):
        rows |= padded[:, dx:dx + W]
    out = np.zeros((H, W), dtype=bool)
    for dy in range(2 * r + 1):
        out |= rows[dy:dy + H]
    return out


def dilate(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    return _shift_or(np.asarray(mask, dtype=bool), radius)


def erode(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    # erosion with a background border is the complement of dilating the
    # complement padded with foreground
    mask = np.asarray(mask, dtype=bool)
    H, W = mask.shape
    r = radius
    padded = np.zeros((H + 2 * r, W + 2 * r), dtype=bool)
    padded[r:r + H, r:r + W] = mask
    rows = np.ones((H + 2 * r, W), dtype=bool)
    for dx in range(2 * r + 1):
        rows &= padded[:, dx:dx + W]
    out = np.ones((H, W), dtype=bool)
    for dy in range(2 * r + 1):
        out &= rows[dy:dy + H]
    return out


def morph(mask: np.ndarray, op: str, radius: int = 1) -> np.ndarray:
    """Apply ``erode``, ``dilate``, ``open`` (erode then dilate) or ``close``."""
    if radius < 1:
        raise ContractError("radius must be >= 1")
    if op == "erode":
        return erode(mask, radius)
    if op == "dilate":
        return dilate(mask, radius)
    if op == "open":
        return dilate(erode(mask, radius), radius)
    if op == "close":
        return erode(dilate(mask, radius), radius)
    raise ContractError(f"unknown morphological op {op!r}")


def denoise(mask: np.ndarray, open_radius: int = 1, close_radius: int = 1) -> np.ndarray:
    out = np.asarray(mask, dtype=bool)
    if open_radius:
        out = morph(out, "open", open_radius)
    if close_radius:
        out = morph(out, "close", close_radius)
    return out


_EIGHT = np.ones((3, 3), dtype=bool)


def connected_components(mask: np.ndarray) -> list[Blob]:
    """8-connected blobs sorted by descending area, then bbox origin (y, x)."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    blobs = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        ys, xs = sl
        crop = labels[sl] == i
        blobs.append(Blob(xs.start, ys.start, xs.stop - xs.start, ys.stop - ys.start, crop))
    blobs.sort(key=lambda b: (-b.area, b.y, b.x))
    return blobs


def filter_blobs(blobs: list[Blob], min_area: int) -> list[Blob]:
    if min_area < 0:
        raise ContractError("min_area must be >= 0")
    return [b for b in blobs if b.area >= min_area]


def default_min_area(width: int, height: int) -> int:
    """0.1% of the frame area."""
    return max(1, int(round(0.001 * width * height)))
