"""Sample-based per-pixel background subtraction (ViBe).

Each pixel keeps ``N`` past intensity samples.  A pixel is background when at
least ``min_matches`` samples lie within ``R`` of its value.  Only background
pixels refresh the model (conservative update), so an object that stops moving
stays in the foreground instead of fading into the background.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .frameio import Frame

# 8-neighbourhood offsets (dy, dx), centre excluded
_OFFSETS = np.array([(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)])


@dataclass(frozen=True)
class VibeParams:
    samples_per_pixel: int = 20
    match_radius: int = 20
    min_matches: int = 2
    subsample_factor: int = 16
    seed: int = 0

    def __post_init__(self):
        if not self.samples_per_pixel >= self.min_matches >= 1:
            raise ContractError("need samples_per_pixel >= min_matches >= 1")
        if self.match_radius <= 0:
            raise ContractError("match_radius must be positive")
        if self.subsample_factor < 1:
            raise ContractError("subsample_factor must be >= 1")


@dataclass
class PixelModel:
    samples: np.ndarray          # (N, H, W) uint8
    params: VibeParams
    rng: np.random.Generator = field(repr=False)

    @property
    def height(self) -> int:
        return self.samples.shape[1]

    @property
    def width(self) -> int:
        return self.samples.shape[2]


def _as_gray(frame) -> np.ndarray:
    if isinstance(frame, Frame):
        if frame.channels != 1:
            raise ContractError("ViBe expects single-channel frames; convert with Frame.gray()")
        return frame.data
    arr = np.asarray(frame)
    if arr.ndim != 2:
        raise ContractError("ViBe expects a 2-D intensity array")
    return arr


def _neighbour_coords(choice: np.ndarray, H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.indices(choice.shape[-2:])
    off = _OFFSETS[choice]
    ny = np.clip(yy + off[..., 0], 0, H - 1)
    nx = np.clip(xx + off[..., 1], 0, W - 1)
    return ny, nx


def init_model(first, params: VibeParams = VibeParams()) -> PixelModel:
    """Fill each pixel's samples from its (clamped) 8-neighbourhood in ``first``."""
    img = _as_gray(first)
    H, W = img.shape
    rng = np.random.default_rng(params.seed)
    N = params.samples_per_pixel
    choice = rng.integers(0, 8, size=(N, H, W))
    ny, nx = _neighbour_coords(choice, H, W)
    samples = img[ny, nx].astype(np.uint8)
    return PixelModel(samples=samples, params=params, rng=rng)


def classify(model: PixelModel, img: np.ndarray) -> np.ndarray:
    """Foreground mask for ``img`` without touching the model."""
    dist = np.abs(model.samples.astype(np.int16) - img.astype(np.int16))
    matches = np.count_nonzero(dist <= model.params.match_radius, axis=0)
    return matches < model.params.min_matches


def step(model: PixelModel, frame) -> np.ndarray:
    """Classify ``frame`` and update ``model`` in place; returns the foreground mask.

    All pixels are classified against the model as it was before this frame.
    The update writes are then applied as if pixels were visited in row-major
    order, each doing its own-sample write before its neighbour write.
    """
    img = _as_gray(frame)
    N, H, W = model.samples.shape
    if img.shape != (H, W):
        raise ContractError(f"frame shape {img.shape} does not match model {(H, W)}")
    fg = classify(model, img)

    p = model.params
    rng = model.rng
    own_draw = rng.random((H, W))
    own_k = rng.integers(0, N, size=(H, W))
    nb_draw = rng.random((H, W))
    nb_choice = rng.integers(0, 8, size=(H, W))
    nb_k = rng.integers(0, N, size=(H, W))

    bg = ~fg
    rate = 1.0 / p.subsample_factor
    own = bg & (own_draw < rate)
    nb = bg & (nb_draw < rate)
    ny, nx = _neighbour_coords(nb_choice, H, W)
    yy, xx = np.indices((H, W))

    pix = np.concatenate([(yy * W + xx)[own], (yy * W + xx)[nb]])
    order = np.concatenate([2 * pix[: own.sum()], 2 * pix[own.sum():] + 1])
    target = np.concatenate([
        (own_k * H * W + yy * W + xx)[own],
        (nb_k * H * W + ny * W + nx)[nb],
    ])
    values = np.concatenate([img[own], img[nb]])
    if target.size:
        seq = np.argsort(order, kind="stable")
        target, values = target[seq], values[seq]
        # keep the last write per target cell
        rev_t = target[::-1]
        _, first_rev = np.unique(rev_t, return_index=True)
        keep = target.size - 1 - first_rev
        flat = model.samples.reshape(-1)
        flat[target[keep]] = values[keep]
    return fg


def run(frames, params: VibeParams = VibeParams()) -> list[np.ndarray]:
    """Foreground masks for a whole sequence; the first frame initialises the model."""
    frames = list(frames)
    if not frames:
        return []
    model = init_model(frames[0], params)
    return [step(model, f) for f in frames]
