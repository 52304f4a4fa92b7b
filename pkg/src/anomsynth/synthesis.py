"""Turn normal frames into synthetic abnormal ones by relocating moving objects.

Per source frame: pick a blob of the denoised foreground mask, refine its
shape with the segmenter, draw a destination centroid from the pixels that
have seen motion, fill the vacated box from the cached prior frame with the
fewest foreground pixels there, and paste the object at the destination.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import maskops, vibe
from .errors import ContractError
from .frameio import Frame, encode_pnm, list_frames, read_image, read_mask, write_image, write_mask
from .maskops import Blob
from .motionmap import MotionMap, default_vicinity
from .segmenter import SegModel, segment_patch, train_segmenter
from .seeding import derive_seed

log = logging.getLogger(__name__)

Rect = tuple[int, int, int, int]


@dataclass
class CacheEntry:
    frame_id: str
    frame: Frame
    mask: np.ndarray


class FrameCache:
    """The ``capacity`` most recent prior frames with their foreground masks."""

    def __init__(self, capacity: int = 50):
        if capacity < 1:
            raise ContractError("cache capacity must be >= 1")
        self.capacity = capacity
        self.entries: deque[CacheEntry] = deque(maxlen=capacity)

    def push(self, frame_id: str, frame: Frame, mask: np.ndarray) -> None:
        self.entries.append(CacheEntry(frame_id, frame, np.asarray(mask, dtype=bool)))

    def ids(self) -> list[str]:
        return [e.frame_id for e in self.entries]

    def __len__(self):
        return len(self.entries)


@dataclass
class SynthSample:
    image: Frame
    source_frame_id: str
    blob: Blob
    src_bbox: Rect
    dst_origin: tuple[int, int]
    inpaint_source_id: str
    seed: int
    sample_index: int = 0
    inpaint_count: int = 0
    cache_ids: list = field(default_factory=list)
    pasted_pixels: int = 0

    @property
    def dst_bbox(self) -> Rect:
        return (self.dst_origin[0], self.dst_origin[1], self.src_bbox[2], self.src_bbox[3])

    def record(self, image_name: str) -> dict:
        return {
            "image": image_name,
            "source_frame_id": self.source_frame_id,
            "sample_index": self.sample_index,
            "seed": self.seed,
            "blob_bbox": list(self.blob.bbox),
            "blob_area": self.blob.area,
            "src_bbox": list(self.src_bbox),
            "dst_origin": list(self.dst_origin),
            "dst_bbox": list(self.dst_bbox),
            "inpaint_source_id": self.inpaint_source_id,
            "inpaint_count": self.inpaint_count,
            "cache_ids": list(self.cache_ids),
            "pasted_pixels": self.pasted_pixels,
        }


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------

def pick_blob(blobs, rng: np.random.Generator) -> Blob | None:
    """Uniform choice among ``blobs``; ``None`` when there is no candidate."""
    if not blobs:
        return None
    return blobs[int(rng.integers(len(blobs)))]


def choose_placement(blob: Blob, mm: MotionMap | np.ndarray, src_bbox: Rect, rng: np.random.Generator,
                     vicinity_radius: int = 0, max_attempts: int = 200,
                     eligible: np.ndarray | None = None) -> tuple[int, int] | None:
    """Destination origin whose blob centroid lands on an eligible pixel.

    Candidates are rejected unless the pasted box fits in the frame and the
    centroid moves by at least ``max(w, h)``.  Returns ``None`` once
    ``max_attempts`` draws have failed or nothing is eligible.
    """
    if eligible is None:
        eligible = mm.eligible_mask(vicinity_radius) if isinstance(mm, MotionMap) else np.asarray(mm, bool)
    H, W = eligible.shape
    ys, xs = np.nonzero(eligible)
    if len(xs) == 0:
        return None
    _, _, w, h = src_bbox
    ox, oy = blob.centroid_offset()
    sx, sy = src_bbox[0] + ox, src_bbox[1] + oy
    min_shift = max(w, h)
    for _ in range(max_attempts):
        i = int(rng.integers(len(xs)))
        cx, cy = int(xs[i]), int(ys[i])
        x0, y0 = cx - ox, cy - oy
        if x0 < 0 or y0 < 0 or x0 + w > W or y0 + h > H:
            continue
        if np.hypot(cx - sx, cy - sy) < min_shift:
            continue
        return (x0, y0)
    return None


def motion_counts(cache: FrameCache, bbox: Rect) -> list[int]:
    x, y, w, h = bbox
    return [int(np.count_nonzero(e.mask[y:y + h, x:x + w])) for e in cache.entries]


def inpaint_region(cache: FrameCache, bbox: Rect) -> tuple[np.ndarray, str, int]:
    """Pixels of ``bbox`` from the cached frame with the fewest foreground pixels there.

    Ties go to the most recent frame.  Returns ``(patch, frame_id, count)``.
    """
    if len(cache) == 0:
        raise ContractError("inpainting needs a non-empty frame cache")
    counts = motion_counts(cache, bbox)
    best = min(counts)
    idx = max(i for i, c in enumerate(counts) if c == best)
    entry = cache.entries[idx]
    x, y, w, h = bbox
    return entry.frame.data[y:y + h, x:x + w].copy(), entry.frame_id, best


def synthesize(frame: Frame, blob: Blob, fine_mask: np.ndarray, dst: tuple[int, int], patch: np.ndarray,
               source_frame_id: str = "", inpaint_source_id: str = "", seed: int = 0) -> SynthSample:
    """Fill the blob's box with ``patch``, then paste the ``fine_mask`` pixels at ``dst``."""
    x, y, w, h = blob.bbox
    fine_mask = np.asarray(fine_mask, dtype=bool)
    if fine_mask.shape != (h, w):
        raise ContractError(f"fine mask {fine_mask.shape} must match the blob box {(h, w)}")
    if patch.shape[:2] != (h, w) or patch.shape[2:] != frame.data.shape[2:]:
        raise ContractError(f"patch {patch.shape} must match the blob box {(h, w)}")
    dx, dy = dst
    if dx < 0 or dy < 0 or dx + w > frame.width or dy + h > frame.height:
        raise ContractError(f"destination box {(dx, dy, w, h)} leaves the frame")
    src = frame.data
    out = src.copy()
    out[y:y + h, x:x + w] = patch
    region = out[dy:dy + h, dx:dx + w]
    region[fine_mask] = src[y:y + h, x:x + w][fine_mask]
    return SynthSample(Frame(out), source_frame_id, blob, blob.bbox, (dx, dy), inpaint_source_id, seed,
                       pasted_pixels=int(fine_mask.sum()))


# --------------------------------------------------------------------------
# Video pipeline
# --------------------------------------------------------------------------

@dataclass
class SynthesisConfig:
    cache_size: int = 50
    max_attempts: int = 200
    samples_per_frame: int = 1
    burn_in: int = 10
    source_stride: int = 1
    use_segmenter: bool = True

    def __post_init__(self):
        if min(self.cache_size, self.max_attempts, self.samples_per_frame, self.source_stride) < 1:
            raise ContractError("synthesis counts must be >= 1")
        if self.burn_in < 0:
            raise ContractError("burn_in must be >= 0")


@dataclass
class MaskConfig:
    open_radius: int = 1
    close_radius: int = 1
    min_area: int | None = None  # default: 0.1% of the frame


@dataclass
class SegmenterConfig:
    enabled: bool = True
    every: int = 5
    max_frames: int = 40
    epochs: int = 15
    learning_rate: float = 0.05
    batch_size: int = 8
    fg_weight: float = 2.0
    crop: int = 40
    crops_per_frame: int = 4


@dataclass
class SynthesisResult:
    samples: list[SynthSample]
    skipped: list[dict]
    masks: list[np.ndarray]
    motion_map: MotionMap
    seg_model: SegModel | None


class _Context:
    """Everything a single synthesis event depends on, shared by run and replay."""

    def __init__(self, frames, ids, masks, mm, seg_model, synth_cfg, mask_cfg, vicinity):
        self.frames, self.ids, self.masks = frames, ids, masks
        self.mm, self.seg_model = mm, seg_model
        self.cfg, self.mask_cfg = synth_cfg, mask_cfg
        H, W = masks[0].shape
        self.vicinity = default_vicinity(W, H) if vicinity is None else vicinity
        self.eligible = mm.eligible_mask(self.vicinity)
        self.min_area = mask_cfg.min_area if mask_cfg.min_area is not None else maskops.default_min_area(W, H)

    def blobs(self, t):
        return maskops.filter_blobs(maskops.connected_components(self.masks[t]), self.min_area)

    def cache_for(self, t) -> FrameCache:
        cache = FrameCache(self.cfg.cache_size)
        for k in range(max(0, t - self.cfg.cache_size), t):
            cache.push(self.ids[k], self.frames[k], self.masks[k])
        return cache

    def event(self, t, blobs, seed, j, cache=None):
        rng = np.random.default_rng(seed)
        blob = pick_blob(blobs, rng)
        if blob is None:
            return None, "no-blob"
        frame = self.frames[t]
        if self.cfg.use_segmenter and self.seg_model is not None:
            fine = segment_patch(self.seg_model, frame, blob.bbox)
        else:
            fine = blob.mask
        dst = choose_placement(blob, self.mm, blob.bbox, rng, max_attempts=self.cfg.max_attempts,
                               eligible=self.eligible)
        if dst is None:
            return None, "no-placement"
        cache = cache if cache is not None else self.cache_for(t)
        patch, src_id, count = inpaint_region(cache, blob.bbox)
        sample = synthesize(frame, blob, fine, dst, patch, self.ids[t], src_id, seed)
        sample.sample_index = j
        sample.inpaint_count = count
        sample.cache_ids = cache.ids()
        return sample, None


def foreground_masks(frames, vibe_params: vibe.VibeParams, mask_cfg: MaskConfig) -> list[np.ndarray]:
    raw = vibe.run([f.gray() for f in frames], vibe_params)
    return [maskops.denoise(m, mask_cfg.open_radius, mask_cfg.close_radius) for m in raw]


def build_motion_map(masks, burn_in: int = 0) -> MotionMap:
    H, W = masks[0].shape
    mm = MotionMap(W, H)
    for m in masks[burn_in:]:
        mm.absorb(m)
    return mm


def fit_segmenter(frames, masks, seg_cfg: SegmenterConfig, burn_in: int, seed: int) -> SegModel | None:
    from .nnet import TrainConfig
    idx = [t for t in range(burn_in, len(frames), seg_cfg.every) if masks[t].any()]
    if not idx:
        return None
    if len(idx) > seg_cfg.max_frames:
        idx = [idx[i] for i in np.linspace(0, len(idx) - 1, seg_cfg.max_frames).round().astype(int)]
    cfg = TrainConfig(learning_rate=seg_cfg.learning_rate, epochs=seg_cfg.epochs,
                      batch_size=seg_cfg.batch_size, class_weights=[1.0, seg_cfg.fg_weight], seed=seed)
    return train_segmenter([frames[t] for t in idx], [masks[t] for t in idx], cfg,
                           crop=seg_cfg.crop, crops_per_frame=seg_cfg.crops_per_frame)


def run_synthesis(ids, frames, seed: int = 0, vibe_params: vibe.VibeParams | None = None,
                  mask_cfg: MaskConfig | None = None, synth_cfg: SynthesisConfig | None = None,
                  seg_cfg: SegmenterConfig | None = None, vicinity: int | None = None) -> SynthesisResult:
    ids, frames = list(ids), list(frames)
    if not frames:
        raise ContractError("no input frames")
    vibe_params = vibe_params or vibe.VibeParams(seed=derive_seed(seed, "vibe"))
    mask_cfg = mask_cfg or MaskConfig()
    synth_cfg = synth_cfg or SynthesisConfig()
    seg_cfg = seg_cfg or SegmenterConfig()

    masks = foreground_masks(frames, vibe_params, mask_cfg)
    mm = build_motion_map(masks, min(synth_cfg.burn_in, len(masks) - 1))
    seg_model = None
    if synth_cfg.use_segmenter and seg_cfg.enabled:
        seg_model = fit_segmenter(frames, masks, seg_cfg, synth_cfg.burn_in, derive_seed(seed, "segmenter"))
    ctx = _Context(frames, ids, masks, mm, seg_model, synth_cfg, mask_cfg, vicinity)

    samples, skipped = [], []
    cache = FrameCache(synth_cfg.cache_size)
    for t in range(len(frames)):
        if t % synth_cfg.source_stride == 0:
            blobs = ctx.blobs(t)
            if not blobs:
                skipped.append({"frame_id": ids[t], "reason": "no-blob"})
            elif t < synth_cfg.burn_in:
                skipped.append({"frame_id": ids[t], "reason": "burn-in"})
            elif len(cache) == 0:
                skipped.append({"frame_id": ids[t], "reason": "no-cache"})
            else:
                for j in range(synth_cfg.samples_per_frame):
                    s = derive_seed(seed, "synthesis", ids[t], j)
                    sample, reason = ctx.event(t, blobs, s, j, cache)
                    if sample is None:
                        skipped.append({"frame_id": ids[t], "sample_index": j, "reason": reason})
                    else:
                        samples.append(sample)
        cache.push(ids[t], frames[t], masks[t])
    log.info("synthesized %d samples, skipped %d", len(samples), len(skipped))
    return SynthesisResult(samples, skipped, masks, mm, seg_model)


def image_name(sample: SynthSample) -> str:
    return f"{sample.source_frame_id}_s{sample.sample_index}.pgm"


def write_dataset(result: SynthesisResult, ids, out_dir, input_dir, settings: dict) -> dict:
    """Write images, masks, motion map, segmenter and ``manifest.json`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    records = []
    for s in result.samples:
        name = image_name(s) if s.image.channels == 1 else image_name(s)[:-4] + ".ppm"
        write_image(s.image, out / "images" / name)
        records.append(s.record(f"images/{name}"))
    for fid, m in zip(ids, result.masks):
        write_mask(m, out / "masks" / f"{fid}.pgm")
    result.motion_map.save(out / "motionmap.pgm")
    if result.seg_model is not None:
        result.seg_model.save(out / "segmenter.bin")
    manifest = {
        "input_dir": str(Path(input_dir).resolve()),
        "frame_ids": list(ids),
        "settings": settings,
        "segmenter": "segmenter.bin" if result.seg_model is not None else None,
        "records": records,
        "skipped": result.skipped,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def load_manifest(out_dir) -> dict:
    path = Path(out_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json in {out_dir}")
    return json.loads(path.read_text())


def synth_image_paths(out_dir) -> list[Path]:
    out = Path(out_dir)
    return [out / r["image"] for r in load_manifest(out)["records"]]


@dataclass
class VerifyReport:
    records: int = 0
    replayed: int = 0
    mismatches: list = field(default_factory=list)
    diff_violations: list = field(default_factory=list)
    inpaint_violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.mismatches or self.diff_violations or self.inpaint_violations) \
            and self.replayed == self.records

    def to_dict(self) -> dict:
        return {**asdict(self), "ok": self.ok}


def _inside(mask: np.ndarray, boxes) -> bool:
    allowed = np.zeros_like(mask)
    for x, y, w, h in boxes:
        allowed[y:y + h, x:x + w] = True
    return not np.any(mask & ~allowed)


def verify_dataset(out_dir, input_dir=None) -> VerifyReport:
    """Replay every manifest record from persisted state and audit it.

    Checks that the replayed image is byte-identical to the stored one, that
    pixel changes stay inside the source and destination boxes, and that the
    inpainting source attains the minimum foreground count over its cache.
    """
    out = Path(out_dir)
    manifest = load_manifest(out)
    settings = manifest["settings"]
    in_dir = Path(input_dir or manifest["input_dir"])
    ids = manifest["frame_ids"]
    by_path = {p.stem: p for p in list_frames(in_dir)}
    frames = [read_image(by_path[fid]) for fid in ids]
    masks = [read_mask(out / "masks" / f"{fid}.pgm") for fid in ids]
    mm = MotionMap.load(out / "motionmap.pgm")
    seg = SegModel.load(out / manifest["segmenter"]) if manifest.get("segmenter") else None
    ctx = _Context(frames, ids, masks, mm, seg, SynthesisConfig(**settings["synthesis"]),
                   MaskConfig(**settings["maskops"]), settings["vicinity"])
    index = {fid: t for t, fid in enumerate(ids)}
    rep = VerifyReport(records=len(manifest["records"]))
    for r in manifest["records"]:
        t = index[r["source_frame_id"]]
        sample, _ = ctx.event(t, ctx.blobs(t), r["seed"], r["sample_index"])
        stored = (out / r["image"]).read_bytes()
        if sample is None or encode_pnm(sample.image) != stored:
            rep.mismatches.append(r["image"])
            continue
        rep.replayed += 1
        stored_img = read_image(out / r["image"]).data
        diff = stored_img != frames[t].data
        if diff.ndim == 3:
            diff = diff.any(axis=2)
        if not _inside(diff, [tuple(r["src_bbox"]), tuple(r["dst_bbox"])]):
            rep.diff_violations.append(r["image"])
        x, y, w, h = r["src_bbox"]
        counts = [int(np.count_nonzero(masks[index[c]][y:y + h, x:x + w])) for c in r["cache_ids"]]
        chosen = int(np.count_nonzero(masks[index[r["inpaint_source_id"]]][y:y + h, x:x + w]))
        if not counts or chosen != min(counts) or r["inpaint_source_id"] not in r["cache_ids"]:
            rep.inpaint_violations.append(r["image"])
    return rep
