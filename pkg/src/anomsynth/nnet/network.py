"""Sequential networks: spec, forward/backward, parameter access and serialization."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ContractError, FormatError
from .layers import Context, Conv, Dense, Dropout, Layer, Softmax, build_layer

_MAGIC = b"ANNET1\n"


@dataclass
class NetSpec:
    layers: list[dict]
    init_seed: int = 0
    input_shape: tuple | None = None  # (C, H, W) or (F,)

    def to_dict(self) -> dict:
        return {"layers": [dict(l) for l in self.layers], "init_seed": self.init_seed,
                "input_shape": list(self.input_shape) if self.input_shape else None}

    @classmethod
    def from_dict(cls, doc: dict) -> "NetSpec":
        shape = doc.get("input_shape")
        return cls([dict(l) for l in doc["layers"]], int(doc.get("init_seed", 0)),
                   tuple(shape) if shape else None)


@dataclass
class Cache:
    """Per-layer activations recorded by a forward pass."""

    net_id: int
    version: int
    layer_caches: list = field(default_factory=list)
    recorded: bool = False
    input_grad: np.ndarray | None = None


class Network:
    def __init__(self, spec: NetSpec):
        self.spec = spec
        self.layers: list[Layer] = [build_layer(d) for d in spec.layers]
        if not self.layers:
            raise ContractError("a network needs at least one layer")
        rng = np.random.default_rng(spec.init_seed)
        for layer in self.layers:
            layer.init_params(rng)
        self.version = 0
        if spec.input_shape is not None:
            self.shapes(spec.input_shape)

    def shapes(self, input_shape) -> list[tuple]:
        """Per-layer output shapes (without batch); raises on incompatibility."""
        shape = tuple(input_shape)
        out = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                shape = layer.out_shape(shape)
            elif len(shape) == 1 and layer.kind in ("conv", "maxpool", "upsample"):
                raise ContractError(f"{layer.kind} cannot follow a flat activation")
            else:
                shape = layer.out_shape(shape)
            out.append(shape)
        return out

    # -- parameters -------------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        return [layer.params[k] for layer in self.layers for k in sorted(layer.params)]

    def set_parameters(self, arrays) -> None:
        arrays = list(arrays)
        slots = [(layer, k) for layer in self.layers for k in sorted(layer.params)]
        if len(arrays) != len(slots):
            raise ContractError("parameter count mismatch")
        for (layer, k), a in zip(slots, arrays):
            if a.shape != layer.params[k].shape:
                raise ContractError(f"shape mismatch for {layer.kind}.{k}")
            layer.params[k] = np.array(a, dtype=np.float64)
        self.version += 1

    def flat_parameters(self) -> np.ndarray:
        ps = self.parameters()
        return np.concatenate([p.ravel() for p in ps]) if ps else np.zeros(0)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def dropout_rates(self) -> list[float]:
        return [l.rate for l in self.layers if isinstance(l, Dropout)]

    def touch(self) -> None:
        """Mark parameters as modified; caches recorded earlier become stale."""
        self.version += 1

    # -- passes -----------------------------------------------------------

    def forward(self, x, mode: str = "eval", mc_seed=0, mc_active: bool = False,
                row_seeds=None, record: bool | None = None, upto: int | None = None):
        """Run the network on ``x``; returns ``(output, cache)``.

        ``mode="train"`` samples dropout masks from ``mc_seed``; in eval mode
        dropout is the identity unless ``mc_active`` is set.  ``row_seeds``
        gives each batch row its own mask stream.  ``upto`` stops after that
        many layers.  Activations are kept for :meth:`backward` when
        ``record`` is true (default: in train mode).
        """
        if mode not in ("train", "eval"):
            raise ContractError(f"unknown mode {mode!r}")
        if record is None:
            record = mode == "train"
        x = np.asarray(x, dtype=np.float64)
        if self.spec.input_shape is not None and tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            raise ContractError(f"input shape {x.shape[1:]} does not match {self.spec.input_shape}")
        seed = tuple(mc_seed) if isinstance(mc_seed, (list, tuple)) else (int(mc_seed),)
        ctx = Context(mode=mode, mc_active=mc_active, mc_seed=seed, row_seeds=row_seeds, record=record)
        cache = Cache(id(self), self.version, recorded=record)
        layers = self.layers if upto is None else self.layers[:upto]
        for i, layer in enumerate(layers):
            x, c = layer.forward(x, ctx, i)
            cache.layer_caches.append(c)
        return x, cache

    def backward(self, cache: Cache, grad, from_logits: bool = False, input_grad: bool = True) -> list[dict]:
        """Gradients of every parameter, as one dict per layer.

        With ``from_logits`` the trailing softmax is skipped and ``grad`` is
        taken with respect to its input.  ``input_grad=False`` lets a leading
        conv skip the input gradient (``cache.input_grad`` is then ``None``).
        """
        if cache.net_id != id(self) or cache.version != self.version:
            raise ContractError("stale cache: parameters changed since the forward pass")
        if not cache.recorded:
            raise ContractError("cache holds no activations; forward with record=True")
        n = len(cache.layer_caches)
        if n != len(self.layers):
            raise ContractError("cache is from a partial forward pass")
        grads: list[dict] = [dict() for _ in self.layers]
        stop = n
        if from_logits:
            if not isinstance(self.layers[-1], Softmax):
                raise ContractError("from_logits requires a trailing softmax")
            stop = n - 1
        g = np.asarray(grad, dtype=np.float64)
        for i in range(stop - 1, -1, -1):
            if i == 0 and not input_grad and isinstance(self.layers[0], Conv):
                g, grads[i] = self.layers[0].backward(g, cache.layer_caches[0], need_dx=False)
            else:
                g, grads[i] = self.layers[i].backward(g, cache.layer_caches[i])
        cache.input_grad = g
        return grads

    def grad_list(self, grads: list[dict]) -> list[np.ndarray]:
        """Flatten per-layer gradient dicts in :meth:`parameters` order."""
        return [grads[i].get(k, np.zeros_like(layer.params[k]))
                for i, layer in enumerate(self.layers) for k in sorted(layer.params)]

    # -- persistence ------------------------------------------------------

    def save(self, path, meta: dict | None = None) -> None:
        header = {"format": "anomsynth-nnet", "version": 1, "spec": self.spec.to_dict(),
                  "shapes": [list(p.shape) for p in self.parameters()], "meta": meta or {}}
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        data = self.flat_parameters().astype("<f8").tobytes()
        Path(path).write_bytes(_MAGIC + struct.pack("<Q", len(blob)) + blob + data)

    @classmethod
    def load(cls, path) -> tuple["Network", dict]:
        raw = Path(path).read_bytes()
        if not raw.startswith(_MAGIC):
            raise FormatError(f"{path}: not a model file")
        off = len(_MAGIC)
        (n,) = struct.unpack("<Q", raw[off:off + 8])
        header = json.loads(raw[off + 8:off + 8 + n].decode("utf-8"))
        net = cls(NetSpec.from_dict(header["spec"]))
        flat = np.frombuffer(raw[off + 8 + n:], dtype="<f8")
        arrays, pos = [], 0
        for shape in header["shapes"]:
            size = int(np.prod(shape))
            if pos + size > flat.size:
                raise OSError(f"{path}: truncated parameter array")
            arrays.append(flat[pos:pos + size].reshape(shape).astype(np.float64))
            pos += size
        if pos != flat.size:
            raise FormatError(f"{path}: trailing bytes after parameters")
        net.set_parameters(arrays)
        return net, header.get("meta", {})


def forward(net: Network, x, mode: str = "eval", mc_seed=0, mc_active: bool = False):
    return net.forward(x, mode=mode, mc_seed=mc_seed, mc_active=mc_active)


def backward(net: Network, cache: Cache, loss_grad, from_logits: bool = False) -> list[dict]:
    return net.backward(cache, loss_grad, from_logits=from_logits)
