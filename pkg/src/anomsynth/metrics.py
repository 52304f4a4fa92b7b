"""Precision-recall evaluation with abnormal as the positive class, and proxy A-distance."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class ScoredItem:
    id: str
    truth: str      # "normal" | "abnormal"
    score: float    # higher = more abnormal

    def __post_init__(self):
        if self.truth not in ("normal", "abnormal"):
            raise ContractError(f"truth must be normal/abnormal, got {self.truth!r}")
        if not np.isfinite(self.score):
            raise ContractError(f"score of {self.id} is not finite")


@dataclass
class EvalReport:
    pr_points: list[tuple[float, float, float]]
    auc_pr: float
    average_precision: float
    counts: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"auc_pr": self.auc_pr, "ap": self.average_precision, "counts": self.counts, **self.extra}


def _arrays(items):
    items = list(items)
    truth = np.array([it.truth == "abnormal" for it in items], dtype=bool)
    score = np.array([it.score for it in items], dtype=np.float64)
    if truth.sum() == 0 or (~truth).sum() == 0:
        raise ContractError("precision-recall needs at least one positive and one negative item")
    return truth, score


def pr_curve(items) -> list[tuple[float, float, float]]:
    """``(threshold, precision, recall)`` at every distinct score, descending.

    An item is predicted positive when its score is at least the threshold,
    so tied scores enter together.
    """
    truth, score = _arrays(items)
    order = np.argsort(-score, kind="stable")
    s, t = score[order], truth[order]
    tp = np.cumsum(t)
    fp = np.cumsum(~t)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    P = int(truth.sum())
    return [(float(s[i]), float(tp[i] / (tp[i] + fp[i])), float(tp[i] / P)) for i in ends]


def auc_pr(points) -> float:
    """Trapezoidal area under precision over recall.

    The curve is extended to recall 0 at the precision of its first point.
    """
    if not points:
        raise ContractError("empty precision-recall curve")
    pts = sorted(points, key=lambda p: -p[0])
    rec = np.array([0.0] + [p[2] for p in pts])
    prec = np.array([pts[0][1]] + [p[1] for p in pts])
    return float(np.sum(np.diff(rec) * (prec[1:] + prec[:-1]) / 2.0))


def average_precision(items) -> float:
    """Step-weighted sum of precision over recall increments."""
    pts = pr_curve(items)
    prev, total = 0.0, 0.0
    for _, p, r in pts:
        total += (r - prev) * p
        prev = r
    return float(total)


def evaluate(items) -> EvalReport:
    items = list(items)
    pts = pr_curve(items)
    counts = {"abnormal": sum(it.truth == "abnormal" for it in items),
              "normal": sum(it.truth == "normal" for it in items)}
    return EvalReport(pts, auc_pr(pts), average_precision(items), counts)


# --------------------------------------------------------------------------
# Proxy A-distance
# --------------------------------------------------------------------------

def _logistic_sgd(x, y, rng, epochs=60, lr=0.1, l2=1e-4, batch=32):
    w = np.zeros(x.shape[1])
    b = 0.0
    for epoch in range(epochs):
        step = lr / (1.0 + 0.05 * epoch)
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch):
            idx = order[start:start + batch]
            z = np.clip(x[idx] @ w + b, -50, 50)
            g = 1.0 / (1.0 + np.exp(-z)) - y[idx]
            w -= step * (x[idx].T @ g / len(idx) + l2 * w)
            b -= step * g.mean()
    return w, b


def _halves(n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    if n == 1:
        return perm, perm
    return perm[:n // 2], perm[n // 2:]


def proxy_a_distance(feats_a, feats_b, seed: int = 0, epochs: int = 60) -> float:
    """``2 (1 - 2 eps)`` with ``eps`` the hold-out error of a linear a-vs-b probe.

    Each set is split in half (seeded); a logistic-regression classifier is
    fitted by SGD on standardized features of the training halves and
    evaluated on the rest.  ``eps`` is clamped at 0.5.
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or len(a) == 0 or len(b) == 0:
        raise ContractError("proxy A-distance needs two non-empty 2-D feature sets")
    if a.shape[1] != b.shape[1]:
        raise ContractError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    rng = np.random.default_rng(seed)
    tr_a, te_a = _halves(len(a), rng)
    tr_b, te_b = _halves(len(b), rng)
    x_tr = np.vstack([a[tr_a], b[tr_b]])
    y_tr = np.r_[np.zeros(len(tr_a)), np.ones(len(tr_b))]
    x_te = np.vstack([a[te_a], b[te_b]])
    y_te = np.r_[np.zeros(len(te_a)), np.ones(len(te_b))]
    mu = x_tr.mean(axis=0)
    sd = x_tr.std(axis=0)
    sd[sd < 1e-12] = 1.0
    w, b0 = _logistic_sgd((x_tr - mu) / sd, y_tr, rng, epochs=epochs)
    pred = ((x_te - mu) / sd) @ w + b0 > 0
    # balanced error so unequal set sizes do not bias eps
    err_a = np.mean(pred[y_te == 0])
    err_b = np.mean(~pred[y_te == 1])
    eps = min(0.5 * (err_a + err_b), 0.5)
    return float(2.0 * (1.0 - 2.0 * eps))


# --------------------------------------------------------------------------
# Output files
# --------------------------------------------------------------------------

def write_pr_csv(points, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall"])
        for t, p, r in points:
            w.writerow([f"{t:.6f}", f"{p:.6f}", f"{r:.6f}"])


def write_report_json(report: EvalReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def render_pr_svg(points, path, title: str = "Precision-Recall", size: int = 400) -> None:
    """Standalone SVG of the curve on fixed ``[0, 1]`` axes, vertices sorted by recall."""
    if not points:
        raise ContractError("no points to plot")
    m = 50
    span = size - 2 * m

    def sx(r):
        return m + r * span

    def sy(p):
        return size - m - p * span

    pts = sorted(points, key=lambda p: (p[2], -p[1]))
    coords = " ".join(f"{sx(r):.2f},{sy(p):.2f}" for _, p, r in pts)
    ticks = []
    for v in (0.0, 0.25, 0.5, 0.75, 1.0):
        ticks.append(f'<text x="{sx(v):.1f}" y="{size - m + 18}" text-anchor="middle" font-size="11">{v:g}</text>')
        ticks.append(f'<text x="{m - 8}" y="{sy(v) + 4:.1f}" text-anchor="end" font-size="11">{v:g}</text>')
    svg = "\n".join([
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<title>{escape(title)}</title>',
        f'<rect x="{m}" y="{m}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        *ticks,
        f'<text x="{size / 2}" y="{size - 10}" text-anchor="middle" font-size="12">recall</text>',
        f'<text x="14" y="{size / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {size / 2})">precision</text>',
        f'<polyline fill="none" stroke="#c0392b" stroke-width="2" points="{coords}"/>',
        "</svg>",
    ])
    Path(path).write_text(svg + "\n")
