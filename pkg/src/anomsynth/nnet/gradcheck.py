"""Central finite-difference checks of backpropagated gradients."""

from __future__ import annotations

import numpy as np

from .layers import MaxPool, ReLU
from .network import Network


def _pattern(net: Network, x, mc_seed):
    """Piecewise-linear regime of the net at ``x`` (ReLU signs, pool winners)."""
    _, cache = net.forward(x, mode="train", mc_seed=mc_seed, record=True)
    out = []
    for layer, c in zip(net.layers, cache.layer_caches):
        if isinstance(layer, ReLU):
            out.append(c)
        elif isinstance(layer, MaxPool):
            out.append(c[0])
    return out


def _same(a, b) -> bool:
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def check_network(net: Network, x: np.ndarray, eps: float = 1e-5, mc_seed=(0,), seed: int = 0,
                  max_coords: int | None = None) -> dict:
    """Compare analytic gradients of ``sum(out * R)`` against central differences.

    ``R`` is a fixed random projection.  Coordinates whose perturbation moves
    the network across a ReLU or max-pool switch are non-differentiable there
    and are skipped.  Returns the maximum relative error over parameters and
    input, plus the number of checked and skipped coordinates.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    out, cache = net.forward(x, mode="train", mc_seed=mc_seed, record=True)
    proj = rng.normal(size=out.shape)
    grads = net.grad_list(net.backward(cache, proj))
    gx = cache.input_grad
    base = _pattern(net, x, mc_seed)

    def loss(inp):
        o, _ = net.forward(inp, mode="train", mc_seed=mc_seed, record=False)
        return float(np.sum(o * proj))

    worst, checked, skipped = 0.0, 0, 0
    targets = [(p, g, False) for p, g in zip(net.parameters(), grads)] + [(x, gx, True)]
    for arr, g, is_input in targets:
        flat = arr.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            old = flat[i]
            flat[i] = old + eps
            f_plus, pat_plus = loss(x), _pattern(net, x, mc_seed)
            flat[i] = old - eps
            f_minus, pat_minus = loss(x), _pattern(net, x, mc_seed)
            flat[i] = old
            if not (_same(pat_plus, base) and _same(pat_minus, base)):
                skipped += 1
                continue
            num = (f_plus - f_minus) / (2 * eps)
            err = float(relative_error(np.asarray(g.reshape(-1)[i]), np.asarray(num)))
            worst = max(worst, err)
            checked += 1
    return {"max_rel_error": worst, "checked": checked, "skipped": skipped}
