"""Matplotlib renderings of the CSV reports (written next to them as PNG)."""

from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "figure.dpi": 120,
}
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@contextmanager
def _report(path: str | Path, width: float = 5.0):
    """Yield ``(fig, ax)`` styled by RC; the figure is saved to ``path`` on exit."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(width, width * GOLDEN))
        try:
            yield fig, ax
            fig.tight_layout()
            fig.savefig(path)
        finally:
            plt.close(fig)


def plot_history(history, path: str | Path) -> Path:
    with _report(path) as (fig, ax):
        steps = [s.step for s in history.steps]
        ax.plot(steps, [s.loss for s in history.steps], lw=1, label="L")
        for attr, name in (("loss_s", "L_s"), ("loss_t", "L_t")):
            pts = [(s.step, getattr(s, attr)) for s in history.steps if getattr(s, attr) is not None]
            if pts:
                ax.plot(*zip(*pts), lw=0.8, alpha=0.7, label=name)
        if history.best_epoch is not None:
            last = [s.step for s in history.steps if s.epoch == history.best_epoch]
            if last:
                ax.axvline(last[-1], color="k", ls=":", lw=0.8, label="best epoch")
        ax.set_xlabel("optimizer step")
        ax.set_ylabel("loss")
        ax.legend()
    return Path(path)


def plot_early_curve(curve, path: str | Path) -> Path:
    with _report(path) as (fig, ax):
        xs = [p.checkpoint for p in curve.points]
        ax.plot(xs, [p.metrics.macro_f1 for p in curve.points], "o-", label="macro-F1")
        ax.plot(xs, [p.metrics.accuracy for p in curve.points], "s--", ms=4, label="accuracy")
        ax.set_xscale("symlog", linthresh=1)
        ax.set_xlabel("posts visible" if curve.mode == "posts" else "seconds since claim")
        ax.set_ylim(0, 1)
        ax.legend()
    return Path(path)


def plot_sweep(result, path: str | Path) -> Path:
    with _report(path) as (fig, ax):
        rows = result.summary_rows()
        xs = [r[0] for r in rows]
        # summary row layout: value, n, acc mean/std, macro_f1 mean/std, ...
        mean = np.array([r[4] for r in rows])
        std = np.array([r[5] for r in rows])
        ax.errorbar(xs, mean, yerr=std, fmt="o-", capsize=3)
        ax.set_xlabel(result.param)
        ax.set_ylabel("macro-F1")
    return Path(path)


def plot_features(table, path: str | Path) -> Path:
    with _report(path, 4.5) as (fig, ax):
        if table.pca is not None:
            xy = table.pca.coords
            labels = np.asarray(table.labels)
            for y, name, marker in ((1, "rumor", "o"), (0, "non-rumor", "^")):
                sel = labels == y
                ax.scatter(xy[sel, 0], xy[sel, 1], s=12, marker=marker, label=name, alpha=0.8)
            ax.legend()
        ax.set_xlabel("PC1")
        ax.set_ylabel("PC2")
    return Path(path)


def plot_cv(result, path: str | Path) -> Path:
    with _report(path) as (fig, ax):
        folds = [f.fold for f in result.folds]
        ax.bar([str(f) for f in folds], [f.metrics.macro_f1 for f in result.folds])
        mean, _ = result.summary()["macro_f1"]
        ax.axhline(mean, color="k", ls="--", lw=0.8, label=f"mean {mean:.3f}")
        ax.set_xlabel("training fold")
        ax.set_ylabel("macro-F1 on held-out folds")
        ax.set_ylim(0, 1)
        ax.legend()
    return Path(path)
