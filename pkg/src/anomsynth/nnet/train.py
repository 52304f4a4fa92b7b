"""Weighted cross-entropy, plain SGD and a seeded mini-batch training loop."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .network import Network

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class ClampWarning(RuntimeWarning):
    """The probability of a true label underflowed and was clamped."""


def weighted_cross_entropy(probs, label, weights):
    """Weighted cross-entropy and its gradient with respect to the logits.

    ``probs`` is ``(N, C, ...)`` softmax output and ``label`` integer classes of
    shape ``(N, ...)``.  A single distribution ``(C,)`` with a scalar label is
    accepted too.  The loss is the mean of ``-w[y] * log p[y]`` over all
    labelled positions and the returned gradient is ``w[y] * (p - onehot(y))``
    divided by that count.
    """
    probs = np.asarray(probs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    single = probs.ndim == 1
    if single:
        probs = probs[None]
        label = np.asarray([label])
    label = np.asarray(label, dtype=np.int64)
    C = probs.shape[1]
    if label.shape != (probs.shape[0],) + probs.shape[2:]:
        raise ContractError(f"labels {label.shape} do not match probabilities {probs.shape}")
    if weights.shape != (C,):
        raise ContractError(f"need {C} class weights, got {weights.shape}")
    if label.min() < 0 or label.max() >= C:
        raise ContractError("label out of range")
    p_true = np.take_along_axis(probs, label[:, None], axis=1)[:, 0]
    if np.any(p_true < PROB_FLOOR):
        warnings.warn("true-class probability clamped at 1e-12", ClampWarning, stacklevel=2)
    w = weights[label]
    count = label.size
    loss = float(np.sum(-w * np.log(np.maximum(p_true, PROB_FLOOR))) / count)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, label[:, None], 1.0, axis=1)
    grad = (probs - onehot) * (w[:, None] / count)
    if single:
        grad = grad[0]
    return loss, grad


def sgd_step(parameters, gradients, learning_rate: float):
    """``p <- p - lr * g`` in place; returns the parameter list."""
    for p, g in zip(parameters, gradients, strict=True):
        if p.shape != g.shape:
            raise ContractError(f"parameter {p.shape} and gradient {g.shape} differ")
        p -= learning_rate * g
    return parameters


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 10
    batch_size: int = 16
    class_weights: list = field(default_factory=lambda: [1.0, 5.0])
    seed: int = 0
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ContractError("learning_rate, epochs and batch_size must be positive")
        if any(w <= 0 for w in self.class_weights):
            raise ContractError("class weights must be positive")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ContractError("momentum must lie in [0, 1) and weight_decay be >= 0")


def fit(net: Network, x: np.ndarray, y: np.ndarray, cfg: TrainConfig, augment=None) -> list[float]:
    """Mini-batch SGD on (``x``, ``y``); returns the mean training loss per epoch.

    ``y`` holds class indices, one per sample or one per output pixel.
    Weight decay applies to weight tensors only, not biases.
    """
    n = len(x)
    if n == 0:
        raise ContractError("empty training set")
    if len(y) != n:
        raise ContractError("inputs and labels differ in length")
    rng = np.random.default_rng([cfg.seed, 1])
    params = net.parameters()
    decay = [cfg.weight_decay if name == "W" else 0.0
             for layer in net.layers for name in sorted(layer.params)]
    velocity = [np.zeros_like(p) for p in params]
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            if augment is not None:
                xb, yb = augment(xb, yb, np.random.default_rng([cfg.seed, 2, epoch, b]))
            probs, cache = net.forward(xb, mode="train", mc_seed=(cfg.seed, 3, epoch, b))
            loss, g = weighted_cross_entropy(probs, yb, cfg.class_weights)
            grads = net.grad_list(net.backward(cache, g, from_logits=True, input_grad=False))
            step = []
            for v, gr, p, wd in zip(velocity, grads, params, decay):
                if wd:
                    gr = gr + wd * p
                if cfg.momentum:
                    v *= cfg.momentum
                    v += gr
                    step.append(v)
                else:
                    step.append(gr)
            sgd_step(params, step, cfg.learning_rate)
            net.touch()
            total += loss * len(idx)
            seen += len(idx)
        trace.append(total / seen)
        log.debug("epoch %d loss %.5f", epoch, trace[-1])
    return trace
