"""Report figures, rendered headless to PNG files."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}

# no Software/date entries, so reruns give identical files
_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, format="png", metadata=_META)
    plt.close(fig)


def pixel_counts(images: Sequence[np.ndarray]) -> np.ndarray:
    """Counts of each 8-bit value 0..255 over all ``images``."""
    counts = np.zeros(256, dtype=np.int64)
    for img in images:
        counts += np.bincount(np.asarray(img, dtype=np.uint8).reshape(-1), minlength=256)
    return counts


def training_curves(metrics, path) -> None:
    steps = [r.step for r in metrics.rows]
    with plt.rc_context(STYLE):
        fig, (top, bottom) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
        top.plot(steps, [r.d_loss for r in metrics.rows], lw=0.8, label="d_loss")
        top.plot(steps, [r.g_loss for r in metrics.rows], lw=0.8, label="g_loss")
        top.set_ylabel("loss")
        top.legend(frameon=False)
        probes = metrics.probes()
        if probes:
            x, y = zip(*probes)
            bottom.plot(x, np.array(y) * 64, marker="o", ms=2.5, lw=0.8, color="k")
        bottom.axhline(64, color="0.7", lw=0.6, ls="--")
        bottom.set_ylim(0, 66)
        bottom.set_xlabel("step")
        bottom.set_ylabel("probe labels correct / 64")
        _save(fig, path)


def composite_preview(image: np.ndarray, path, title: str = "") -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(image, cmap="gray", vmin=0, vmax=255, interpolation="nearest")
        ax.set_xticks(np.arange(0, 225, 28) - 0.5, minor=True)
        ax.set_yticks(np.arange(0, 225, 28) - 0.5, minor=True)
        ax.grid(which="minor", color="tab:red", lw=0.3)
        ax.tick_params(which="both", length=0, labelbottom=False, labelleft=False)
        if title:
            ax.set_title(title)
        _save(fig, path)


def pixel_histogram(images: Sequence[np.ndarray], path) -> np.ndarray:
    counts = pixel_counts(images)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.bar(np.arange(256), counts, width=1.0, color="0.3")
        ax.set_yscale("log")
        ax.set_xlim(-1, 256)
        ax.set_xlabel("pixel value")
        ax.set_ylabel("count")
        _save(fig, path)
    return counts


def capacity_chart(rows: Sequence[tuple], path) -> None:
    """``rows`` of ``(label, chars_per_image)``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        names = [r[0] for r in rows]
        vals = [r[1] for r in rows]
        ax.bar(names, vals, color="0.4")
        for i, v in enumerate(vals):
            ax.text(i, v, f"{v:.2f}", ha="center", va="bottom")
        ax.set_ylabel("characters / image")
        _save(fig, path)


def reliability_chart(stats, path) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        trials = [r.trial for r in stats.rows]
        acc = [r.labels_correct / r.labels_total if r.labels_total else 1.0 for r in stats.rows]
        ax.plot(trials, acc, marker=".", lw=0.6, color="k", label="label accuracy")
        ax.scatter([r.trial for r in stats.rows if not r.recovered],
                   [a for r, a in zip(stats.rows, acc) if not r.recovered],
                   color="tab:red", s=12, zorder=3, label="not recovered")
        ax.set_xlabel("trial")
        ax.set_ylabel("labels correct")
        ax.legend(frameon=False)
        _save(fig, path)
