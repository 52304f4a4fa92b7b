"""CNN discriminator with Monte-Carlo dropout posterior statistics.

Each stochastic pass keeps dropout active at inference and records the
softmax probability of the NORMAL class.  Over ``M`` passes the mean ``mu``
and standard deviation ``sigma`` give ``p' = mu - sigma / 2``; synthetic
frames with ``p'`` at or below a threshold are retained as abnormal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ABNORMAL, NORMAL
from .errors import ContractError
from .frameio import Frame, resize_bilinear
from .nnet import Dense, NetSpec, Network, TrainConfig, fit

DEFAULT_MC_SAMPLES = 10


@dataclass(frozen=True)
class PosteriorStats:
    sample_probs: tuple
    mu: float
    sigma: float
    p_prime: float

    @classmethod
    def from_samples(cls, probs, ddof: int = 0) -> "PosteriorStats":
        p = np.asarray(probs, dtype=np.float64)
        if p.size == 0:
            raise ContractError("need at least one Monte-Carlo sample")
        if np.all(p == p.flat[0]):
            # summation rounding would otherwise leave a tiny nonzero spread
            mu, sigma = float(p.flat[0]), 0.0
        else:
            mu = float(p.mean())
            sigma = float(p.std(ddof=ddof)) if p.size > ddof else 0.0
        return cls(tuple(float(v) for v in p), mu, sigma, mu - sigma / 2.0)


def conv_stack_spec(input_size=(64, 64), widths=(8, 16, 32), rates=(0.1, 0.3, 0.4),
                    convs_per_stack=None, fc=(64,), fc_rate=0.5, in_channels=1,
                    init_seed: int = 0) -> NetSpec:
    """Stacks of conv3x3-relu (repeated) + maxpool2 + dropout, then FC layers and a 2-way softmax."""
    if len(widths) != len(rates):
        raise ContractError("one dropout rate per conv stack")
    convs_per_stack = convs_per_stack or (1,) * len(widths)
    h, w = input_size
    layers, c = [], in_channels
    for width, rate, reps in zip(widths, rates, convs_per_stack):
        for _ in range(reps):
            layers += [{"type": "conv", "k": 3, "cin": c, "cout": width, "stride": 1, "pad": 1},
                       {"type": "relu"}]
            c = width
        layers += [{"type": "maxpool", "k": 2}, {"type": "dropout", "rate": rate}]
        h, w = h // 2, w // 2
    n = c * h * w
    for units in fc:
        layers += [{"type": "dense", "in": n, "out": units}, {"type": "relu"},
                   {"type": "dropout", "rate": fc_rate}]
        n = units
    layers += [{"type": "dense", "in": n, "out": 2}, {"type": "softmax"}]
    return NetSpec(layers, init_seed=init_seed, input_shape=(in_channels, *input_size))


def default_spec(input_size=(64, 64), init_seed: int = 0) -> NetSpec:
    return conv_stack_spec(input_size, init_seed=init_seed)


def vgg19_like_spec(input_size=(224, 224), widths=(64, 128, 256, 512, 512), init_seed: int = 0) -> NetSpec:
    """Five-stack VGG-19 layout with dropout 0.1/0.1/0.3/0.4/0.4 and 0.5 on the FC layers."""
    return conv_stack_spec(input_size, widths=widths, rates=(0.1, 0.1, 0.3, 0.4, 0.4),
                           convs_per_stack=(2, 2, 4, 4, 4), fc=(4096, 4096), fc_rate=0.5,
                           init_seed=init_seed)


def default_train_config(seed: int = 0) -> TrainConfig:
    return TrainConfig(learning_rate=0.003, epochs=20, batch_size=16, class_weights=[1.0, 5.0],
                       seed=seed, momentum=0.9, weight_decay=1e-4)


def preprocess(frames, input_size) -> np.ndarray:
    """Resize to ``input_size`` (h, w), take luma, centre to [-0.5, 0.5]; ``(N, 1, h, w)``."""
    h, w = input_size
    out = np.empty((len(frames), 1, h, w))
    for i, f in enumerate(frames):
        if not isinstance(f, Frame):
            f = Frame(np.asarray(f, dtype=np.uint8))
        out[i, 0] = resize_bilinear(f, w, h).gray() / 255.0 - 0.5
    return out


@dataclass
class ClassifierModel:
    """Network plus its input pipeline.

    With a ``reference`` image (per-pixel median of the training normals)
    inputs become ``gain * (x - reference)``, which leaves mostly the
    objects and suppresses the static scene.
    """

    net: Network
    input_size: tuple
    bayesian: bool = True
    ddof: int = 0
    loss_trace: list = field(default_factory=list)
    reference: np.ndarray | None = None
    gain: float = 1.0

    def prepare(self, x: np.ndarray) -> np.ndarray:
        if self.reference is None:
            return x
        return self.gain * (x - self.reference)

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"kind": "classifier", "input_size": list(self.input_size),
                "bayesian": self.bayesian, "ddof": self.ddof, "gain": self.gain,
                "reference": None if self.reference is None else self.reference.tolist(),
                **(extra or {})}
        self.net.save(path, meta=meta)

    @classmethod
    def load(cls, path) -> tuple["ClassifierModel", dict]:
        net, meta = Network.load(path)
        if meta.get("kind") != "classifier":
            raise ContractError(f"{path} is not a classifier model")
        ref = meta.get("reference")
        model = cls(net, tuple(meta["input_size"]), bool(meta.get("bayesian", True)), int(meta.get("ddof", 0)),
                    reference=None if ref is None else np.asarray(ref, dtype=np.float64),
                    gain=float(meta.get("gain", 1.0)))
        return model, meta


def reference_image(x_normal: np.ndarray) -> np.ndarray:
    """Per-pixel median over preprocessed normal frames, shape ``(1, h, w)``."""
    if len(x_normal) == 0:
        raise ContractError("reference needs at least one normal frame")
    return np.median(x_normal, axis=0)


def train_arrays(x_normal: np.ndarray, x_abnormal: np.ndarray, cfg: TrainConfig, spec: NetSpec,
                 input_size, bayesian: bool = True, reference: np.ndarray | None = None,
                 gain: float = 1.0) -> ClassifierModel:
    if len(x_normal) == 0 or len(x_abnormal) == 0:
        raise ContractError("classifier training needs both normal and abnormal samples")
    model = ClassifierModel(Network(spec), tuple(input_size), bayesian, reference=reference, gain=gain)
    x = model.prepare(np.concatenate([x_normal, x_abnormal]))
    y = np.r_[np.full(len(x_normal), NORMAL), np.full(len(x_abnormal), ABNORMAL)].astype(np.int64)
    model.loss_trace = fit(model.net, x, y, cfg)
    return model


def train_classifier(normals, abnormals, cfg: TrainConfig | None = None, spec: NetSpec | None = None,
                     input_size=(64, 64), bayesian: bool = True, residual: bool = False,
                     gain: float = 1.0) -> ClassifierModel:
    """Fit on normal frames vs synthetic abnormal frames (Frames or objects with ``.image``)."""
    abnormals = [getattr(a, "image", a) for a in abnormals]
    cfg = cfg or default_train_config()
    spec = spec or default_spec(tuple(input_size), init_seed=cfg.seed)
    xn = preprocess(list(normals), input_size)
    ref = reference_image(xn) if residual else None
    return train_arrays(xn, preprocess(abnormals, input_size), cfg, spec, input_size, bayesian, ref, gain)


def _as_input(model: ClassifierModel, frame) -> np.ndarray:
    if isinstance(frame, np.ndarray) and frame.dtype == np.float64 and frame.ndim == 3:
        return frame[None]
    return preprocess([getattr(frame, "image", frame)], model.input_size)


def mc_probs(model: ClassifierModel, x: np.ndarray, M: int, seeds) -> np.ndarray:
    """Normal-class probabilities ``(len(x), M)`` for preprocessed inputs.

    Pass ``m`` of item ``i`` samples its dropout masks from ``(seeds[i], m)``
    alone, so the masks do not depend on how items are batched.
    """
    if M < 1:
        raise ContractError("M must be >= 1")
    x = model.prepare(x)
    out = np.empty((len(x), M))
    chunk = max(1, 64 // M)
    for start in range(0, len(x), chunk):
        xb = x[start:start + chunk]
        rows = np.repeat(xb, M, axis=0)
        row_seeds = [(int(seeds[start + i]), m) for i in range(len(xb)) for m in range(M)]
        probs, _ = model.net.forward(rows, mode="eval", mc_active=True, row_seeds=row_seeds)
        out[start:start + len(xb)] = probs[:, NORMAL].reshape(len(xb), M)
    return out


def mc_predict(model: ClassifierModel, frame, M: int = DEFAULT_MC_SAMPLES, seed: int = 0) -> PosteriorStats:
    if M < 1:
        raise ContractError("M must be >= 1")
    if not model.bayesian:
        raise ContractError("mc_predict needs a Bayesian model")
    probs = mc_probs(model, _as_input(model, frame), M, [seed])[0]
    return PosteriorStats.from_samples(probs, ddof=model.ddof)


def mc_predict_many(model: ClassifierModel, x: np.ndarray, M: int = DEFAULT_MC_SAMPLES,
                    seeds=None) -> list[PosteriorStats]:
    seeds = list(range(len(x))) if seeds is None else list(seeds)
    probs = mc_probs(model, x, M, seeds)
    return [PosteriorStats.from_samples(p, ddof=model.ddof) for p in probs]


def predict_many(model: ClassifierModel, x: np.ndarray, batch: int = 64) -> np.ndarray:
    x = model.prepare(x)
    out = []
    for start in range(0, len(x), batch):
        probs, _ = model.net.forward(x[start:start + batch], mode="eval")
        out.append(probs[:, NORMAL])
    return np.concatenate(out) if out else np.zeros(0)


def predict(model: ClassifierModel, frame) -> float:
    """Normal-class probability from a single dropout-free pass."""
    return float(predict_many(model, _as_input(model, frame))[0])


def select_samples(stats, threshold: float) -> list[int]:
    if not 0.0 <= threshold <= 1.0:
        raise ContractError("threshold must lie in [0, 1]")
    return [i for i, s in enumerate(stats) if s.p_prime <= threshold]


def _head_index(net: Network) -> int:
    dense = [i for i, layer in enumerate(net.layers) if isinstance(layer, Dense)]
    if not dense:
        raise ContractError("network has no dense head")
    return dense[-1]


def feature_width(model: ClassifierModel) -> int:
    return model.net.layers[_head_index(model.net)].n_in


def extract_features_many(model: ClassifierModel, x: np.ndarray, batch: int = 64) -> np.ndarray:
    head = _head_index(model.net)
    x = model.prepare(x)
    out = []
    for start in range(0, len(x), batch):
        act, _ = model.net.forward(x[start:start + batch], mode="eval", upto=head)
        out.append(act.reshape(len(act), -1))
    return np.concatenate(out) if out else np.zeros((0, feature_width(model)))


def extract_features(model: ClassifierModel, frame) -> np.ndarray:
    """Dropout-free activations entering the final dense + softmax head."""
    return extract_features_many(model, _as_input(model, frame))[0]
