"""Fully-convolutional foreground segmenter trained on noisy background-subtraction masks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .frameio import Frame
from .nnet import NetSpec, Network, TrainConfig, fit


def default_spec(init_seed: int = 0) -> NetSpec:
    return NetSpec([
        {"type": "conv", "k": 3, "cin": 1, "cout": 8, "stride": 1, "pad": 1},
        {"type": "relu"},
        {"type": "conv", "k": 3, "cin": 8, "cout": 16, "stride": 1, "pad": 1},
        {"type": "relu"},
        {"type": "conv", "k": 3, "cin": 16, "cout": 2, "stride": 1, "pad": 1},
        {"type": "softmax"},
    ], init_seed=init_seed)


def encoder_decoder_spec(init_seed: int = 0) -> NetSpec:
    """Pool-and-upsample variant for larger inputs (stride 2)."""
    return NetSpec([
        {"type": "conv", "k": 3, "cin": 1, "cout": 8, "stride": 1, "pad": 1},
        {"type": "relu"},
        {"type": "maxpool", "k": 2},
        {"type": "conv", "k": 3, "cin": 8, "cout": 16, "stride": 1, "pad": 1},
        {"type": "relu"},
        {"type": "upsample", "factor": 2},
        {"type": "conv", "k": 3, "cin": 16, "cout": 2, "stride": 1, "pad": 1},
        {"type": "softmax"},
    ], init_seed=init_seed)


def default_train_config(seed: int = 0) -> TrainConfig:
    return TrainConfig(learning_rate=0.05, epochs=15, batch_size=8, class_weights=[1.0, 2.0],
                       seed=seed, momentum=0.9, weight_decay=1e-4)


def _stride(net: Network) -> int:
    """Input side multiple the network needs: product of all downsampling factors."""
    down = 1
    for layer in net.layers:
        if layer.kind == "maxpool":
            down *= layer.k
        elif layer.kind == "conv":
            down *= layer.stride
    return down


def _receptive_margin(net: Network) -> int:
    m, scale = 0, 1
    for layer in net.layers:
        if layer.kind == "conv":
            m += (layer.k // 2) * scale
            scale *= layer.stride
        elif layer.kind == "maxpool":
            m += (layer.k - 1) * scale
            scale *= layer.k
    return m


def to_input(gray: np.ndarray) -> np.ndarray:
    return (np.asarray(gray, dtype=np.float64) / 255.0 - 0.5)[None]


@dataclass
class SegModel:
    net: Network
    final_loss: float = float("nan")
    loss_trace: list = field(default_factory=list)

    @property
    def stride(self) -> int:
        return _stride(self.net)

    def predict_prob(self, gray: np.ndarray) -> np.ndarray:
        """Foreground probability per pixel of a whole image."""
        s = self.stride
        H, W = gray.shape
        ph, pw = (-H) % s, (-W) % s
        img = np.pad(np.asarray(gray), ((0, ph), (0, pw)), mode="edge")
        probs, _ = self.net.forward(to_input(img)[None], mode="eval")
        return probs[0, 1, :H, :W]

    def save(self, path) -> None:
        self.net.save(path, meta={"kind": "segmenter", "final_loss": self.final_loss})

    @classmethod
    def load(cls, path) -> "SegModel":
        net, meta = Network.load(path)
        return cls(net, meta.get("final_loss", float("nan")))


def _gray(frame) -> np.ndarray:
    return frame.gray() if isinstance(frame, Frame) else np.asarray(frame)


def _crops(grays, masks, size: int, per_frame: int, rng):
    xs, ys = [], []
    for g, m in zip(grays, masks):
        H, W = g.shape
        ch, cw = min(size, H), min(size, W)
        fg = np.argwhere(m)
        for j in range(per_frame):
            if j % 2 == 0 and len(fg):
                cy, cx = fg[rng.integers(len(fg))]
                y0 = int(np.clip(cy - ch // 2, 0, H - ch))
                x0 = int(np.clip(cx - cw // 2, 0, W - cw))
            else:
                y0 = int(rng.integers(0, H - ch + 1))
                x0 = int(rng.integers(0, W - cw + 1))
            xs.append(to_input(g[y0:y0 + ch, x0:x0 + cw]))
            ys.append(m[y0:y0 + ch, x0:x0 + cw].astype(np.int64))
    return np.stack(xs), np.stack(ys)


def train_segmenter(frames, pseudo_masks, cfg: TrainConfig | None = None, spec: NetSpec | None = None,
                    crop: int = 40, crops_per_frame: int = 4) -> SegModel:
    """Fit the segmenter to (frame, pseudo-mask) pairs with per-pixel weighted cross-entropy.

    Training uses ``crops_per_frame`` seeded crops of ``crop`` pixels per
    frame, half of them centred on a foreground pixel.  ``crop=0`` trains on
    whole frames.
    """
    frames = list(frames)
    pseudo_masks = list(pseudo_masks)
    if not frames:
        raise ContractError("empty segmentation training set")
    if len(frames) != len(pseudo_masks):
        raise ContractError("frames and masks differ in number")
    grays = [_gray(f) for f in frames]
    for g, m in zip(grays, pseudo_masks):
        if g.shape != np.shape(m):
            raise ContractError("mask dimensions must equal frame dimensions")
    cfg = cfg or default_train_config()
    spec = spec or default_spec(init_seed=cfg.seed)
    net = Network(spec)
    s = _stride(net)
    rng = np.random.default_rng([cfg.seed, 11])
    if crop:
        size = crop - crop % s or s
        x, y = _crops(grays, [np.asarray(m, bool) for m in pseudo_masks], size, crops_per_frame, rng)
    else:
        x = np.stack([to_input(g) for g in grays])
        y = np.stack([np.asarray(m, dtype=np.int64) for m in pseudo_masks])
    H, W = x.shape[2:]
    if H % s or W % s:
        x = x[:, :, :H - H % s, :W - W % s]
        y = y[:, :H - H % s, :W - W % s]
    trace = fit(net, x, y, cfg)
    return SegModel(net, trace[-1], trace)


def segment_patch(model: SegModel, frame, bbox) -> np.ndarray:
    """Binary foreground mask of ``bbox`` (x, y, w, h); probability 0.5 counts as foreground.

    The box is evaluated together with a margin of real frame context as wide
    as the network's receptive radius, then padded to the network stride.
    """
    x, y, w, h = (int(v) for v in bbox)
    gray = _gray(frame)
    H, W = gray.shape
    if w <= 0 or h <= 0:
        raise ContractError(f"degenerate bbox {bbox}")
    if x < 0 or y < 0 or x + w > W or y + h > H:
        raise ContractError(f"bbox {bbox} exceeds the {W}x{H} frame")
    m = _receptive_margin(model.net)
    x0, y0 = max(x - m, 0), max(y - m, 0)
    x1, y1 = min(x + w + m, W), min(y + h + m, H)
    prob = model.predict_prob(gray[y0:y1, x0:x1])
    return prob[y - y0:y - y0 + h, x - x0:x - x0 + w] >= 0.5


def iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, bool)
    b = np.asarray(b, bool)
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union
