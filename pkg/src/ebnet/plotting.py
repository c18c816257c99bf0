"""Figures written next to the CLI's JSON reports.

Uses the object-oriented matplotlib API with the Agg canvas, so no global
pyplot state is touched and rendering is safe from worker threads.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
}

PALETTE = {"mwp": "#4c72b0", "c-mwp": "#dd8452"}


def _figure(width=5.0, height=None):
    golden = (np.sqrt(5) - 1.0) / 2.0
    fig = Figure(figsize=(width, height or width * golden), dpi=120)
    FigureCanvasAgg(fig)
    return fig


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    return path


def attention_overlay(image, attention, path, title: str = "") -> Path:
    """Image (C x H x W in [0, 1]) with the attention map blended on top."""
    img = np.asarray(image, dtype=np.float64)
    img = img.transpose(1, 2, 0) if img.shape[0] in (1, 3) else img
    if img.shape[-1] == 1:
        img = np.repeat(img, 3, axis=-1)
    att = np.asarray(attention, dtype=np.float64).reshape(img.shape[:2])
    fig = _figure(8.0, 3.6)
    ax0, ax1 = fig.subplots(1, 2)
    ax0.imshow(np.clip(img, 0, 1))
    ax0.set_title("input")
    ax1.imshow(np.clip(img, 0, 1).mean(axis=-1), cmap="gray")
    im = ax1.imshow(att, cmap="jet", alpha=0.55)
    y, x = np.unravel_index(np.argmax(att), att.shape)
    ax1.plot([x], [y], marker="+", color="white", markersize=12, mew=2)
    ax1.set_title(title or "attention")
    fig.colorbar(im, ax=ax1, fraction=0.046, pad=0.04)
    for ax in (ax0, ax1):
        ax.set_xticks([])
        ax.set_yticks([])
    return _save(fig, path)


def pointing_accuracy(report: dict, path) -> Path:
    """Grouped bars: per-category accuracy for each method, full and difficult sets."""
    methods = [m for m in ("mwp", "c-mwp") if m in report["methods"]]
    cats = sorted(report["methods"][methods[0]]["all"]["per_category"])
    fig = _figure(6.5, 3.2)
    axes = fig.subplots(1, 2, sharey=True)
    width = 0.8 / len(methods)
    for ax, subset in zip(axes, ("all", "difficult")):
        for k, m in enumerate(methods):
            res = report["methods"][m].get(subset)
            if not res:
                continue
            vals = [res["per_category"].get(c, np.nan) for c in cats]
            ax.bar(np.arange(len(cats)) + k * width, vals, width,
                   label=f"{m} ({res['mean_accuracy']:.2f})", color=PALETTE.get(m))
        ax.set_xticks(np.arange(len(cats)) + width * (len(methods) - 1) / 2)
        ax.set_xticklabels(cats, rotation=30, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_title(subset)
        ax.legend(loc="lower right", fontsize=7)
    axes[0].set_ylabel("pointing accuracy")
    return _save(fig, path)


def alpha_sweep(report: dict, path) -> Path:
    sweep = report["sweep"]
    alphas = [row["alpha"] for row in sweep]
    errs = [row["error"] for row in sweep]
    fig = _figure()
    ax = fig.subplots()
    ax.plot(alphas, errs, marker="o", color=PALETTE["mwp"])
    ax.axvline(report["best_alpha"], color="0.5", ls="--", lw=1)
    ax.set_xlabel(r"threshold factor $\alpha$")
    ax.set_ylabel("localization error (IoU < 0.5)")
    ax.set_ylim(-0.02, 1.02)
    return _save(fig, path)


def recall_bars(report: dict, path) -> Path:
    ks = sorted(int(k) for k in report["recall"])
    vals = [report["recall"][str(k)] for k in ks]
    fig = _figure(4.0)
    ax = fig.subplots()
    ax.bar([f"R@{k}" for k in ks], vals, color=PALETTE["c-mwp"])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("recall")
    ax.set_title(rf"$\gamma$ = {report['gamma']}")
    return _save(fig, path)
