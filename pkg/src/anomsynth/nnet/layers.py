"""Layer implementations.  Activations are float64 arrays ``(N, C, H, W)`` or ``(N, F)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError


@dataclass
class Context:
    mode: str = "eval"
    mc_active: bool = False
    mc_seed: tuple = (0,)
    row_seeds: list | None = None
    record: bool = False

    @property
    def sampling(self) -> bool:
        return self.mode == "train" or self.mc_active


class Layer:
    kind = "layer"
    params: dict

    def __init__(self):
        self.params = {}

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def out_shape(self, shape: tuple) -> tuple:
        return shape

    def forward(self, x, ctx: Context, index: int):
        raise NotImplementedError

    def backward(self, dy, cache):
        raise NotImplementedError

    def _check(self, leftover: dict) -> "Layer":
        if leftover:
            raise ContractError(f"unexpected fields for {self.kind}: {sorted(leftover)}")
        return self


class Conv(Layer):
    kind = "conv"

    def __init__(self, k: int, cin: int, cout: int, stride: int = 1, pad: int = 0):
        super().__init__()
        if min(k, cin, cout, stride) < 1 or pad < 0:
            raise ContractError("invalid conv geometry")
        self.k, self.cin, self.cout, self.stride, self.pad = k, cin, cout, stride, pad
        self.params = {"W": np.zeros((cout, cin, k, k)), "b": np.zeros(cout)}

    def init_params(self, rng):
        fan_in = self.cin * self.k * self.k
        self.params["W"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(self.cout, self.cin, self.k, self.k))
        self.params["b"] = np.zeros(self.cout)

    def out_shape(self, shape):
        c, h, w = shape
        if c != self.cin:
            raise ContractError(f"conv expects {self.cin} channels, got {c}")
        ho = (h + 2 * self.pad - self.k) // self.stride + 1
        wo = (w + 2 * self.pad - self.k) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ContractError(f"conv kernel {self.k} larger than padded input {h}x{w}")
        return (self.cout, ho, wo)

    def forward(self, x, ctx, index):
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise ContractError(f"conv expects (N, {self.cin}, H, W), got {x.shape}")
        N = x.shape[0]
        _, ho, wo = self.out_shape(x.shape[1:])
        p, s, k = self.pad, self.stride, self.k
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * ho * wo, self.cin * k * k)
        wmat = self.params["W"].reshape(self.cout, -1)
        out = cols @ wmat.T + self.params["b"]
        y = out.reshape(N, ho, wo, self.cout).transpose(0, 3, 1, 2)
        cache = (cols, xp.shape, ho, wo) if ctx.record else None
        return np.ascontiguousarray(y), cache

    def backward(self, dy, cache, need_dx: bool = True):
        cols, xp_shape, ho, wo = cache
        N = dy.shape[0]
        k, s, p = self.k, self.stride, self.pad
        dmat = dy.transpose(0, 2, 3, 1).reshape(-1, self.cout)
        wmat = self.params["W"].reshape(self.cout, -1)
        grads = {"W": (dmat.T @ cols).reshape(self.params["W"].shape), "b": dmat.sum(axis=0)}
        if not need_dx:
            return None, grads
        dcols = (dmat @ wmat).reshape(N, ho, wo, self.cin, k, k)
        dxp = np.zeros(xp_shape)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if p:
            dxp = dxp[:, :, p:-p, p:-p]
        return dxp, grads


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, ctx, index):
        mask = x > 0
        return x * mask, (mask if ctx.record else None)

    def backward(self, dy, cache):
        return dy * cache, {}


class MaxPool(Layer):
    kind = "maxpool"

    def __init__(self, k: int):
        super().__init__()
        if k < 1:
            raise ContractError("pool size must be >= 1")
        self.k = k

    def out_shape(self, shape):
        c, h, w = shape
        if h % self.k or w % self.k:
            raise ContractError(f"maxpool({self.k}) needs spatial dims divisible by {self.k}, got {h}x{w}")
        return (c, h // self.k, w // self.k)

    def forward(self, x, ctx, index):
        N, C, H, W = x.shape
        self.out_shape((C, H, W))
        k = self.k
        ho, wo = H // k, W // k
        blocks = x.reshape(N, C, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, ho, wo, k * k)
        arg = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return y, ((arg, x.shape) if ctx.record else None)

    def backward(self, dy, cache):
        arg, shape = cache
        N, C, H, W = shape
        k = self.k
        ho, wo = H // k, W // k
        blocks = np.zeros((N, C, ho, wo, k * k))
        np.put_along_axis(blocks, arg[..., None], dy[..., None], axis=-1)
        dx = blocks.reshape(N, C, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(shape)
        return dx, {}


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by ``1/(1-rate)`` while sampling."""

    kind = "dropout"

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ContractError("dropout rate must lie in [0, 1)")
        self.rate = rate

    def _mask(self, shape, ctx, index):
        if ctx.row_seeds is not None:
            if len(ctx.row_seeds) != shape[0]:
                raise ContractError("row_seeds must have one entry per batch row")
            rows = [np.random.default_rng([*_seed_list(s), index]).random(shape[1:]) for s in ctx.row_seeds]
            u = np.stack(rows)
        else:
            u = np.random.default_rng([*_seed_list(ctx.mc_seed), index]).random(shape)
        return (u >= self.rate) / (1.0 - self.rate)

    def forward(self, x, ctx, index):
        if not ctx.sampling or self.rate == 0.0:
            return x, None
        scale = self._mask(x.shape, ctx, index)
        return x * scale, (scale if ctx.record else None)

    def backward(self, dy, cache):
        if cache is None:
            return dy, {}
        return dy * cache, {}


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int):
        super().__init__()
        if n_in < 1 or n_out < 1:
            raise ContractError("dense sizes must be positive")
        self.n_in, self.n_out = n_in, n_out
        self.params = {"W": np.zeros((n_in, n_out)), "b": np.zeros(n_out)}

    def init_params(self, rng):
        self.params["W"] = rng.normal(0.0, np.sqrt(2.0 / self.n_in), size=(self.n_in, self.n_out))
        self.params["b"] = np.zeros(self.n_out)

    def out_shape(self, shape):
        if int(np.prod(shape)) != self.n_in:
            raise ContractError(f"dense expects {self.n_in} inputs, got shape {shape}")
        return (self.n_out,)

    def forward(self, x, ctx, index):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.n_in:
            raise ContractError(f"dense expects {self.n_in} inputs, got {flat.shape[1]}")
        y = flat @ self.params["W"] + self.params["b"]
        return y, ((flat, x.shape) if ctx.record else None)

    def backward(self, dy, cache):
        flat, shape = cache
        grads = {"W": flat.T @ dy, "b": dy.sum(axis=0)}
        return (dy @ self.params["W"].T).reshape(shape), grads


class Upsample(Layer):
    kind = "upsample"

    def __init__(self, factor: int):
        super().__init__()
        if factor < 1:
            raise ContractError("upsample factor must be >= 1")
        self.factor = factor

    def out_shape(self, shape):
        c, h, w = shape
        return (c, h * self.factor, w * self.factor)

    def forward(self, x, ctx, index):
        f = self.factor
        return x.repeat(f, axis=2).repeat(f, axis=3), (x.shape if ctx.record else None)

    def backward(self, dy, cache):
        N, C, H, W = cache
        f = self.factor
        return dy.reshape(N, C, H, f, W, f).sum(axis=(3, 5)), {}


class Softmax(Layer):
    """Softmax over axis 1 (classes, or channels for per-pixel heads)."""

    kind = "softmax"

    def forward(self, x, ctx, index):
        y = softmax(x)
        return y, (y if ctx.record else None)

    def backward(self, dy, cache):
        y = cache
        return y * (dy - (dy * y).sum(axis=1, keepdims=True)), {}


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _seed_list(seed) -> list[int]:
    if isinstance(seed, (list, tuple)):
        return [int(s) for s in seed]
    return [int(seed)]


def build_layer(doc: dict) -> Layer:
    doc = dict(doc)
    kind = doc.pop("type", None)
    try:
        if kind == "conv":
            return Conv(int(doc.pop("k")), int(doc.pop("cin")), int(doc.pop("cout")),
                        int(doc.pop("stride", 1)), int(doc.pop("pad", 0)))._check(doc)
        if kind == "relu":
            return ReLU()._check(doc)
        if kind == "maxpool":
            return MaxPool(int(doc.pop("k")))._check(doc)
        if kind == "dropout":
            return Dropout(float(doc.pop("rate")))._check(doc)
        if kind == "dense":
            return Dense(int(doc.pop("in")), int(doc.pop("out")))._check(doc)
        if kind == "upsample":
            return Upsample(int(doc.pop("factor")))._check(doc)
        if kind == "softmax":
            return Softmax()._check(doc)
    except KeyError as exc:
        raise ContractError(f"layer {kind!r} missing field {exc}") from exc
    raise ContractError(f"unknown layer type {kind!r}")
