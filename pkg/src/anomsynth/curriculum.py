"""Threshold sweep over posterior-selected synthetic sets with hold-out model selection."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import bayes
from .bayes import ClassifierModel, PosteriorStats
from .errors import ContractError
from .metrics import ScoredItem, auc_pr, average_precision, pr_curve
from .nnet import NetSpec, TrainConfig
from .seeding import derive_seed

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 1.0)


def split_holdout(n_normal: int, n_abnormal: int, fraction: float = 0.3, seed: int = 0):
    """Stratified hold-out split of two classes given by their sizes.

    Returns ``(train_normal, train_abnormal), (val_normal, val_abnormal)`` as
    sorted index arrays; each class puts ``round(fraction * n)`` items
    (at least one, at most ``n - 1``) into validation.
    """
    if not 0.0 < fraction < 1.0:
        raise ContractError("fraction must lie in (0, 1)")
    if n_normal < 2 or n_abnormal < 2:
        raise ContractError("each class needs at least two items for a hold-out split")
    rng = np.random.default_rng(seed)
    parts = []
    for n in (n_normal, n_abnormal):
        k = min(max(int(round(fraction * n)), 1), n - 1)
        perm = rng.permutation(n)
        parts.append((np.sort(perm[k:]), np.sort(perm[:k])))
    (tn, vn), (ta, va) = parts
    return (tn, ta), (vn, va)


def keep_every(items, step: int):
    """Frame-rate reduction: keep items 0, step, 2*step, ..."""
    if step < 1:
        raise ContractError("step must be >= 1")
    return items[::step]


@dataclass
class CurriculumConfig:
    thresholds: tuple = DEFAULT_THRESHOLDS
    holdout_fraction: float = 0.3
    mc_samples: int = bayes.DEFAULT_MC_SAMPLES
    input_size: tuple = (64, 64)
    bayesian: bool = True
    ddof: int = 0
    residual: bool = True
    gain: float = 3.0
    seed: int = 0
    train: TrainConfig = field(default_factory=bayes.default_train_config)
    spec: NetSpec | None = None

    def __post_init__(self):
        ts = [float(t) for t in self.thresholds]
        if not ts:
            raise ContractError("need at least one threshold")
        if any(b < a for a, b in zip(ts, ts[1:])) or ts[0] < 0 or ts[-1] > 1:
            raise ContractError("thresholds must ascend within [0, 1]")
        self.thresholds = tuple(ts)
        self.input_size = tuple(self.input_size)


@dataclass
class ThresholdRecord:
    t: float
    selected: int
    auc: float | None
    ap: float | None
    skipped: bool = False


@dataclass
class CurriculumReport:
    records: list[ThresholdRecord]
    best_t: float
    best_model: ClassifierModel
    base_model: ClassifierModel
    synth_stats: list[PosteriorStats]
    split: tuple
    models: dict = field(default_factory=dict)

    @property
    def best_auc(self) -> float:
        return next(r.auc for r in self.records if r.t == self.best_t)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "selected", "auc", "ap"])
            for r in self.records:
                w.writerow([f"{r.t:.6f}", r.selected,
                            "" if r.auc is None else f"{r.auc:.6f}",
                            "" if r.ap is None else f"{r.ap:.6f}"])


def abnormal_scores(model: ClassifierModel, x: np.ndarray, M: int, seeds) -> np.ndarray:
    """``1 - P(normal)``: MC mean for Bayesian models, a single pass otherwise."""
    if model.bayesian:
        return 1.0 - np.array([s.mu for s in bayes.mc_predict_many(model, x, M, seeds)])
    return 1.0 - bayes.predict_many(model, x)


def validate(model: ClassifierModel, x_val_n, x_val_a, M, seed) -> tuple[float, float]:
    x = np.concatenate([x_val_n, x_val_a])
    seeds = [derive_seed(seed, "validation", i) for i in range(len(x))]
    scores = abnormal_scores(model, x, M, seeds)
    truth = ["normal"] * len(x_val_n) + ["abnormal"] * len(x_val_a)
    items = [ScoredItem(str(i), tr, float(s)) for i, (tr, s) in enumerate(zip(truth, scores))]
    return auc_pr(pr_curve(items)), average_precision(items)


def run_curriculum(x_normal: np.ndarray, x_synth: np.ndarray, cfg: CurriculumConfig,
                   keep_models: bool = False) -> CurriculumReport:
    """Train on all synthetic frames, score them, then retrain per threshold.

    Every synthetic frame is scored by the base model (``synth_stats``);
    selection only looks at the training part of the split.

    Inputs are preprocessed arrays (see :func:`bayes.preprocess`).  Every
    retrain starts from the same initialisation and seed; the validation
    split is fixed before the sweep.  The best model maximises validation
    PR-AUC, ties going to the smaller threshold.
    """
    (tn, ta), (vn, va) = split_holdout(len(x_normal), len(x_synth), cfg.holdout_fraction,
                                       derive_seed(cfg.seed, "split"))
    spec = cfg.spec or bayes.default_spec(cfg.input_size, init_seed=derive_seed(cfg.seed, "init") % 2**32)
    x_tn, x_ta = x_normal[tn], x_synth[ta]
    x_vn, x_va = x_normal[vn], x_synth[va]
    ref = bayes.reference_image(x_tn) if cfg.residual else None

    def train(x_abn):
        m = bayes.train_arrays(x_tn, x_abn, cfg.train, spec, cfg.input_size, cfg.bayesian, ref, cfg.gain)
        m.ddof = cfg.ddof
        return m

    base = train(x_ta)
    score_seeds = [derive_seed(cfg.seed, "score", i) for i in range(len(x_synth))]
    if cfg.bayesian:
        all_stats = bayes.mc_predict_many(base, x_synth, cfg.mc_samples, score_seeds)
    else:
        all_stats = [PosteriorStats.from_samples([v]) for v in bayes.predict_many(base, x_synth)]
    stats = [all_stats[i] for i in ta]

    # identical selections give identical retrains, so each distinct set is fit once
    by_selection = {tuple(range(len(x_ta))): base}
    records, models = [], {}
    for t in cfg.thresholds:
        sel = bayes.select_samples(stats, t)
        if not sel:
            records.append(ThresholdRecord(t, 0, None, None, skipped=True))
            log.info("t=%.2f selects nothing; skipped", t)
            continue
        key = tuple(sel)
        if key not in by_selection:
            by_selection[key] = train(x_ta[sel])
        model = by_selection[key]
        auc, ap = validate(model, x_vn, x_va, cfg.mc_samples, cfg.seed)
        records.append(ThresholdRecord(t, len(sel), auc, ap))
        models[t] = model
        log.info("t=%.2f selected=%d val auc=%.4f ap=%.4f", t, len(sel), auc, ap)

    scored = [r for r in records if not r.skipped]
    if not scored:
        raise ContractError("no threshold selected any synthetic sample")
    best = max(scored, key=lambda r: (r.auc, -r.t))
    return CurriculumReport(records, best.t, models[best.t], base, all_stats,
                            ((tn, ta), (vn, va)), models if keep_models else {})
