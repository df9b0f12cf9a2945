"""Report figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"simple": "#1f77b4", "random": "#d62728"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_case_metrics(rows_by_mode: dict[str, list[dict]], path) -> Path:
    """Per-case Dice and surface distance, before and after refinement."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.8))
    for mode, rows in rows_by_mode.items():
        rows = [r for r in rows if r.get("dice_atlas") is not None]
        if not rows:
            continue
        x = np.arange(len(rows))
        color = COLORS.get(mode, "k")
        for ax, key in zip(axes, ("dice", "apd_ssd_mm")):
            ax.plot(x, [r[f"{key}_atlas"] for r in rows], "o--", color=color, alpha=0.5,
                    label=f"{mode}, atlas")
            ax.plot(x, [r[f"{key}_refined"] for r in rows], "s-", color=color,
                    label=f"{mode}, refined")
            ax.set_xticks(x)
            ax.set_xticklabels([r["case_id"] for r in rows], rotation=60, fontsize=7)
    axes[0].set_ylabel("Dice")
    axes[1].set_ylabel("symmetric surface distance (mm)")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_energy_traces(traces: dict[str, list[tuple]], path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for name, trace in traces.items():
        it = [t[0] for t in trace]
        e = np.array([t[1] for t in trace])
        ax.plot(it, e / e[0], lw=1, label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel("energy / initial energy")
    if len(traces) <= 12:
        ax.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    return _save(fig, path)


def plot_selection_history(history, path, title: str = "") -> Path:
    """Per-atlas estimated performance across selection iterations."""
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    ids = sorted({i for h in history for i in h.alive})
    for i in ids:
        pts = [(h.iteration, h.performance[i]) for h in history if i in h.performance]
        its, perf = zip(*pts)
        removed = any(i in h.removed for h in history)
        ax.plot(its, perf, "x-" if removed else "o-", color="0.6" if removed else "C0", lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("Dice vs fused estimate")
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def plot_overlay(image, truth, pred, path, axis: int = 2) -> Path:
    """Middle slice of the image with truth and prediction contours."""
    k = image.grid.dims[axis] // 2
    take = [slice(None)] * 3
    take[axis] = k
    take = tuple(take)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(image.data[take].T, cmap="gray", origin="lower")
    for lab, color in ((truth, "r"), (pred, "b")):
        if lab is None:
            continue
        sl = lab.data[take]
        if sl.any() and not sl.all():
            ax.contour(sl.T, levels=[0.5], colors=color, linewidths=1)
    ax.set_axis_off()
    return _save(fig, path)
