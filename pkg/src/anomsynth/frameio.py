"""Frames, binary PNM I/O, resizing and a synthetic surveillance scene generator.

A video is a directory of PNM files whose lexicographic order is the frame
order (``frame_000001.pgm`` upward).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, FormatError

FRAME_PATTERN = "frame_{:06d}.pgm"
_PNM_SUFFIXES = {".pgm", ".ppm", ".pnm"}


@dataclass(frozen=True, eq=False)
class Frame:
    """An immutable 8-bit raster, shape ``(h, w)`` or ``(h, w, 3)``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype != np.uint8:
            raise ContractError(f"frame data must be uint8, got {arr.dtype}")
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise ContractError(f"frame must have 1 or 3 channels, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ContractError("frame dimensions must be positive")
        arr = np.array(arr, copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    def gray(self) -> np.ndarray:
        """Single-channel luma as uint8; RGB is reduced by a rounded average."""
        if self.channels == 1:
            return self.data
        total = self.data.astype(np.uint16).sum(axis=2)
        return ((total + 1) // 3).astype(np.uint8)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __repr__(self):
        return f"Frame({self.width}x{self.height}x{self.channels})"


# --------------------------------------------------------------------------
# PNM
# --------------------------------------------------------------------------

def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of PNM header")
    return buf[start:pos], pos


def decode_pnm(buf: bytes) -> Frame:
    """Decode the bytes of a binary P5/P6 image with maxval 255."""
    if len(buf) < 2 or buf[:2] not in (b"P5", b"P6"):
        raise FormatError(f"unsupported PNM magic {buf[:2]!r}")
    channels = 1 if buf[:2] == b"P5" else 3
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _next_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"malformed PNM header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError("PNM dimensions must be positive")
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after PNM header")
    pos += 1
    size = width * height * channels
    payload = buf[pos:pos + size]
    if len(payload) < size:
        raise OSError(f"truncated PNM payload: expected {size} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return Frame(arr.reshape(shape))


def encode_pnm(frame: Frame) -> bytes:
    magic = b"P5" if frame.channels == 1 else b"P6"
    header = magic + f"\n{frame.width} {frame.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(frame.data).tobytes()


def read_image(path) -> Frame:
    return decode_pnm(Path(path).read_bytes())


def write_image(frame: Frame, path) -> None:
    Path(path).write_bytes(encode_pnm(frame))


def mask_to_frame(mask: np.ndarray) -> Frame:
    """Render a boolean mask as a {0, 255} grayscale frame."""
    return Frame(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def frame_to_mask(frame: Frame) -> np.ndarray:
    return frame.gray() >= 128


def read_mask(path) -> np.ndarray:
    return frame_to_mask(read_image(path))


def write_mask(mask: np.ndarray, path) -> None:
    write_image(mask_to_frame(mask), path)


def list_frames(directory) -> list[Path]:
    """PNM files of a directory in lexicographic (= temporal) order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in _PNM_SUFFIXES)


def read_video(directory) -> tuple[list[str], list[Frame]]:
    paths = list_frames(directory)
    return [p.stem for p in paths], [read_image(p) for p in paths]


def write_video(frames: Sequence[Frame], directory, start: int = 1) -> list[str]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ids = []
    for i, frame in enumerate(frames, start=start):
        name = FRAME_PATTERN.format(i)
        write_image(frame, directory / name)
        ids.append(Path(name).stem)
    return ids


# --------------------------------------------------------------------------
# Resizing
# --------------------------------------------------------------------------

def _corner_coords(n_out: int, n_in: int) -> np.ndarray:
    if n_out == 1:
        return np.zeros(1)
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def resize_bilinear(frame: Frame, w: int, h: int) -> Frame:
    """Bilinear resize with corner-aligned sampling, rounded half up."""
    if w < 1 or h < 1:
        raise ContractError("target size must be positive")
    if (w, h) == (frame.width, frame.height):
        return frame
    return Frame(_bilinear(frame.data, w, h))


def _bilinear(data: np.ndarray, w: int, h: int) -> np.ndarray:
    src = data.astype(np.float64)
    ys = _corner_coords(h, src.shape[0])
    xs = _corner_coords(w, src.shape[1])
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, src.shape[0] - 1)
    x1 = np.minimum(x0 + 1, src.shape[1] - 1)
    fy = ys - y0
    fx = xs - x0
    if src.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def resize_nearest(arr: np.ndarray, w: int, h: int) -> np.ndarray:
    """Nearest-neighbour resize of any 2-D (or HxWxC) array; label-preserving."""
    if w < 1 or h < 1:
        raise ContractError("target size must be positive")
    arr = np.asarray(arr)
    rows = np.minimum(((np.arange(h) + 0.5) * arr.shape[0] / h).astype(int), arr.shape[0] - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * arr.shape[1] / w).astype(int), arr.shape[1] - 1)
    return arr[rows][:, cols]


# --------------------------------------------------------------------------
# Synthetic scenes
# --------------------------------------------------------------------------

Rect = tuple[int, int, int, int]  # x, y, w, h


@dataclass
class SpriteSpec:
    shape: str = "rect"            # "rect" or "disc"
    size: tuple[int, int] = (8, 8)  # w, h (discs use w as diameter)
    intensity: int = 220
    corridor: Rect | None = None   # falls back to the scene corridor
    speed: float = 2.0
    velocity: tuple[float, float] | None = None

    def __post_init__(self):
        if self.shape not in ("rect", "disc"):
            raise ConfigError(f"unknown sprite shape {self.shape!r}")
        self.size = tuple(int(s) for s in self.size)
        if self.shape == "disc":
            self.size = (self.size[0], self.size[0])
        if min(self.size) < 1:
            raise ConfigError("sprite size must be positive")
        if self.corridor is not None:
            self.corridor = tuple(int(c) for c in self.corridor)
        if self.velocity is not None:
            self.velocity = tuple(float(v) for v in self.velocity)


@dataclass
class SceneSpec:
    """Parameters of a generated scene.

    ``background`` is either a :class:`Frame` or a dict of generator keys
    (``width``, ``height``, ``base``, ``gradient``, ``texture``, ``bands``).
    Each sprite bounces inside its own corridor (or the scene corridor);
    ``anomaly_fraction`` of the frames after ``warmup_frames`` have one sprite
    moved fully outside its corridor.
    """

    background: Frame | dict = field(default_factory=dict)
    sprites: list[SpriteSpec] = field(default_factory=list)
    corridor: Rect | None = None
    anomaly_fraction: float = 0.0
    fps: float = 25.0
    length: int = 100
    seed: int = 0
    noise_std: float = 2.0
    warmup_frames: int = 0

    def __post_init__(self):
        self.sprites = [s if isinstance(s, SpriteSpec) else SpriteSpec(**s) for s in self.sprites]
        if self.corridor is not None:
            self.corridor = tuple(int(c) for c in self.corridor)
        if not 0.0 <= self.anomaly_fraction <= 1.0:
            raise ConfigError("anomaly_fraction must lie in [0, 1]")
        if self.length < 1:
            raise ConfigError("length must be positive")
        if not 0 <= self.warmup_frames <= self.length:
            raise ConfigError("warmup_frames must lie in [0, length]")

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "SceneSpec":
        doc = dict(doc)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown scene keys: {sorted(unknown)}")
        bg = doc.get("background", {})
        if isinstance(bg, str):
            path = Path(bg)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            doc["background"] = read_image(path)
        try:
            doc["sprites"] = [SpriteSpec(**s) for s in doc.get("sprites", [])]
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "SceneSpec":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(doc, base_dir=path.parent)


@dataclass
class Scene:
    frames: list[Frame]
    labels: list[str]
    sprite_truth: list[np.ndarray]
    # per-frame list of (x, y, w, h, corridor) for every sprite drawn
    placements: list[list[tuple[int, int, int, int, Rect]]]


def make_background(params: dict, seed: int) -> Frame:
    """Static textured background.

    ``bands`` is a list of ``[y0, y1, level]`` horizontal strips painted over
    the base level, e.g. a road and a sidewalk.
    """
    unknown = set(params) - {"width", "height", "base", "gradient", "texture", "bands"}
    if unknown:
        raise ConfigError(f"unknown background keys: {sorted(unknown)}")
    w = int(params.get("width", 160))
    h = int(params.get("height", 128))
    if w < 1 or h < 1:
        raise ConfigError("background size must be positive")
    img = np.full((h, w), float(params.get("base", 110)))
    for y0, y1, level in params.get("bands", []):
        img[int(y0):int(y1), :] = float(level)
    img += float(params.get("gradient", 10)) * (np.arange(w)[None, :] / max(w - 1, 1) - 0.5)
    rng = np.random.default_rng([seed, 7])
    img += rng.normal(0.0, float(params.get("texture", 4)), size=(h, w))
    return Frame(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def sprite_mask(shape: str, w: int, h: int) -> np.ndarray:
    if shape == "rect":
        return np.ones((h, w), dtype=bool)
    r = w / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    return (xx + 0.5 - r) ** 2 + (yy + 0.5 - r) ** 2 <= r * r


def _bounce(p0: float, v: float, t: int, lo: float, hi: float) -> float:
    span = hi - lo
    if span <= 0:
        return lo
    u = (p0 - lo + v * t) % (2 * span)
    return lo + (u if u <= span else 2 * span - u)


def _inside(x: int, y: int, w: int, h: int, rect: Rect) -> bool:
    cx, cy, cw, ch = rect
    return x >= cx and y >= cy and x + w <= cx + cw and y + h <= cy + ch


def _disjoint(x: int, y: int, w: int, h: int, rect: Rect) -> bool:
    cx, cy, cw, ch = rect
    return x + w <= cx or cx + cw <= x or y + h <= cy or cy + ch <= y


def gen_scene(spec: SceneSpec) -> Scene:
    """Render the scene; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    if isinstance(spec.background, Frame):
        background = spec.background
    else:
        background = make_background(spec.background, spec.seed)
    H, W = background.height, background.width
    sprites = spec.sprites
    corridors = []
    for s in sprites:
        c = s.corridor if s.corridor is not None else spec.corridor
        if c is None:
            c = (0, 0, W, H)
        cx, cy, cw, ch = c
        if cx < 0 or cy < 0 or cw < 1 or ch < 1 or cx + cw > W or cy + ch > H:
            raise ConfigError(f"corridor {c} does not lie within the {W}x{H} frame")
        if s.size[0] > cw or s.size[1] > ch:
            raise ConfigError(f"sprite {s.size} larger than its corridor {c}")
        corridors.append(c)

    motion = []
    for s, (cx, cy, cw, ch) in zip(sprites, corridors):
        sw, sh = s.size
        x0 = rng.uniform(cx, cx + cw - sw)
        y0 = rng.uniform(cy, cy + ch - sh)
        if s.velocity is not None:
            v = s.velocity
        else:
            ang = rng.uniform(0, 2 * np.pi)
            v = (s.speed * np.cos(ang), s.speed * np.sin(ang))
        motion.append((x0, y0, v))

    active = list(range(spec.warmup_frames, spec.length))
    n_anom = int(round(spec.anomaly_fraction * len(active)))
    if n_anom and sprites:
        displaceable = [i for i, (s, c) in enumerate(zip(sprites, corridors))
                        if _has_room_outside(s.size, c, W, H)]
        if not displaceable:
            raise ConfigError("no sprite can be placed outside its corridor")
        anomalous = set(rng.choice(active, size=n_anom, replace=False).tolist())
    else:
        displaceable = []
        anomalous = set()

    masks = [sprite_mask(s.shape, *s.size) for s in sprites]
    frames, labels, truth, placements = [], [], [], []
    for t in range(spec.length):
        visible = t >= spec.warmup_frames
        pos = []
        if visible:
            for s, c, (x0, y0, v) in zip(sprites, corridors, motion):
                sw, sh = s.size
                x = int(round(_bounce(x0, v[0], t, c[0], c[0] + c[2] - sw)))
                y = int(round(_bounce(y0, v[1], t, c[1], c[1] + c[3] - sh)))
                pos.append([x, y])
            if t in anomalous:
                k = displaceable[int(rng.integers(len(displaceable)))]
                sw, sh = sprites[k].size
                while True:
                    x = int(rng.integers(0, W - sw + 1))
                    y = int(rng.integers(0, H - sh + 1))
                    if _disjoint(x, y, sw, sh, corridors[k]):
                        break
                pos[k] = [x, y]
        img = background.data.astype(np.float64)
        union = np.zeros((H, W), dtype=bool)
        placed = []
        abnormal = False
        for s, c, m, p in zip(sprites, corridors, masks, pos):
            x, y = p
            sw, sh = s.size
            if img.ndim == 3:
                img[y:y + sh, x:x + sw][m] = np.broadcast_to(np.asarray(s.intensity, float), (int(m.sum()), 3))
            else:
                img[y:y + sh, x:x + sw][m] = float(s.intensity)
            union[y:y + sh, x:x + sw] |= m
            placed.append((x, y, sw, sh, c))
            abnormal |= not _inside(x, y, sw, sh, c)
        if spec.noise_std > 0:
            img = img + rng.normal(0.0, spec.noise_std, size=img.shape)
        frames.append(Frame(np.clip(np.rint(img), 0, 255).astype(np.uint8)))
        labels.append("abnormal" if abnormal else "normal")
        truth.append(union)
        placements.append(placed)
    return Scene(frames, labels, truth, placements)


def _has_room_outside(size, corridor, W, H) -> bool:
    sw, sh = size
    cx, cy, cw, ch = corridor
    return cx >= sw or W - (cx + cw) >= sw or cy >= sh or H - (cy + ch) >= sh


def default_scene_doc(length: int = 500, anomaly_fraction: float = 0.1, seed: int = 0) -> dict:
    """A 160x128 street: pedestrians on a sidewalk strip, cars on the road below."""
    return {
        "background": {
            "width": 160, "height": 128, "base": 105, "gradient": 12, "texture": 4,
            "bands": [[4, 40, 150], [48, 124, 75]],
        },
        "sprites": [
            {"shape": "rect", "size": [18, 10], "intensity": 225, "corridor": [0, 50, 160, 72],
             "velocity": [2.6, 0.4]},
            {"shape": "rect", "size": [16, 9], "intensity": 200, "corridor": [0, 50, 160, 72],
             "velocity": [-2.1, -0.3]},
            {"shape": "disc", "size": [7, 7], "intensity": 25, "corridor": [0, 4, 160, 36],
             "speed": 1.2},
            {"shape": "disc", "size": [7, 7], "intensity": 45, "corridor": [0, 4, 160, 36],
             "speed": 1.0},
        ],
        "anomaly_fraction": anomaly_fraction,
        "fps": 25,
        "length": length,
        "seed": seed,
        "noise_std": 2.0,
        "warmup_frames": 1,
    }


def parse_frame_index(frame_id: str) -> int | None:
    m = re.search(r"(\d+)$", frame_id)
    return int(m.group(1)) if m else None
