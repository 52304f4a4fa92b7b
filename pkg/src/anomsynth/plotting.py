"""Raster figures for the CLI report path (matplotlib, headless)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

FIG_SIZE = (4.5, 3.4)

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def plot_pr(points, path, auc: float | None = None, ap: float | None = None) -> None:
    """Precision against recall, points sorted by recall, axes fixed to the unit square."""
    pts = sorted(points, key=lambda p: (p[2], -p[1]))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=FIG_SIZE)
        label = None
        if auc is not None:
            label = f"AUC {auc:.3f}" + (f", AP {ap:.3f}" if ap is not None else "")
        ax.plot([p[2] for p in pts], [p[1] for p in pts], marker=".", lw=1.2, label=label)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        if label:
            ax.legend(loc="lower left", frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_curriculum(records, path, best_t: float | None = None) -> None:
    """Validation AUC and AP per threshold, with the selected count on a twin axis."""
    done = [r for r in records if not r.skipped]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=FIG_SIZE)
        ts = list(range(len(done)))
        ax.plot(ts, [r.auc for r in done], marker="o", lw=1.2, label="AUC")
        ax.plot(ts, [r.ap for r in done], marker="s", lw=1.0, ls="--", label="AP")
        ax.set_xticks(ts)
        ax.set_xticklabels([f"{r.t:g}" for r in done])
        ax.set_xlabel("threshold on p'")
        ax.set_ylabel("validation score")
        ax.set_ylim(0, 1.02)
        if best_t is not None and any(r.t == best_t for r in done):
            ax.axvline(next(i for i, r in enumerate(done) if r.t == best_t), color="0.6", lw=0.8, ls=":")
        tw = ax.twinx()
        tw.bar(ts, [r.selected for r in done], color="0.85", width=0.5, zorder=0)
        tw.set_ylabel("selected samples")
        ax.set_zorder(tw.get_zorder() + 1)
        ax.patch.set_visible(False)
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
