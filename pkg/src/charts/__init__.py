"""
Chart engine — training and evaluation visualisations.

Generates PNG charts for the run directories: loss curves, the depth-probe
triptych, latency bars and the ablation table.
Uses matplotlib with the project palette.

All functions return a Path to the generated PNG.
"""

from __future__ import annotations

from pathlib import Path
from tempfile import mkdtemp

import matplotlib
matplotlib.use("Agg")  # Non-interactive backend
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from src.evaluation.latency import LatencyReport


# ──────────────────────────────────────────────
# Palette
# ──────────────────────────────────────────────

COLOURS = {
    "primary": "#1B3A5C",
    "accent": "#2E75B6",
    "dark_text": "#2C3E50",
    "red": "#E74C3C",
    "amber": "#F39C12",
    "green": "#27AE60",
    "grey": "#BDC3C7",
    "dark_grey": "#7F8C8D",
}

LOSS_COLOURS = {
    "l_vis": COLOURS["accent"],
    "l_lin": COLOURS["amber"],
    "l_act": COLOURS["green"],
    "l_total": COLOURS["primary"],
}

VARIANT_COLOURS = {
    "non_cot": COLOURS["grey"],
    "ar_cot": COLOURS["red"],
    "parallel_cot": COLOURS["accent"],
    "dual_cot": COLOURS["primary"],
    "visual_cot": COLOURS["accent"],
    "linguistic_cot": COLOURS["amber"],
    "no_cot": COLOURS["grey"],
}

_chart_dir: str | None = None


def _get_chart_dir() -> Path:
    global _chart_dir
    if _chart_dir is None:
        _chart_dir = mkdtemp(prefix="dualcot_charts_")
    return Path(_chart_dir)


def _save(fig: plt.Figure, name: str, out_dir: str | Path | None = None, dpi: int = 150) -> Path:
    directory = Path(out_dir) if out_dir is not None else _get_chart_dir()
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}.png"
    fig.savefig(str(path), dpi=dpi, bbox_inches="tight", facecolor="white", edgecolor="none")
    plt.close(fig)
    return path


def _style_ax(ax: plt.Axes) -> None:
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.spines["left"].set_color(COLOURS["grey"])
    ax.spines["bottom"].set_color(COLOURS["grey"])
    ax.tick_params(colors=COLOURS["dark_text"], labelsize=8)


# ──────────────────────────────────────────────
# 1. Loss curves
# ──────────────────────────────────────────────

def chart_loss_curves(metrics: pd.DataFrame, out_dir: str | Path | None = None, window: int = 20) -> Path:
    """One panel per loss component, raw values faint with a rolling mean on top."""
    columns = [c for c in LOSS_COLOURS if c in metrics.columns and metrics[c].abs().sum() > 0]
    fig, axes = plt.subplots(1, max(len(columns), 1), figsize=(3.2 * max(len(columns), 1), 2.6), squeeze=False)
    for ax, col in zip(axes[0], columns):
        colour = LOSS_COLOURS[col]
        ax.plot(metrics["step"], metrics[col], color=colour, alpha=0.25, linewidth=0.8)
        ax.plot(metrics["step"], metrics[col].rolling(window, min_periods=1).mean(), color=colour, linewidth=1.6)
        ax.set_title(col, fontsize=9, fontweight="bold", color=COLOURS["dark_text"])
        ax.set_xlabel("step", fontsize=8, color=COLOURS["dark_grey"])
        ax.set_yscale("log")
        _style_ax(ax)
    fig.tight_layout()
    return _save(fig, "loss_curves", out_dir)


# ──────────────────────────────────────────────
# 2. Depth-probe triptych
# ──────────────────────────────────────────────

def chart_probe_triptych(image: np.ndarray, depth: np.ndarray, probed: np.ndarray, name: str = "probe",
                         out_dir: str | Path | None = None, pearson_r: float | None = None) -> Path:
    """Observation, ground-truth depth and the depth decoded from H_vis side by side."""
    fig, axes = plt.subplots(1, 3, figsize=(7.5, 2.7))
    panels = [(np.clip(image, 0, 1), "observation", None),
              (depth, "ground-truth depth", "viridis"),
              (probed, "probe depth", "viridis")]
    for ax, (data, title, cmap) in zip(axes, panels):
        ax.imshow(data, cmap=cmap, vmin=0.0, vmax=1.0, interpolation="nearest")
        ax.set_title(title, fontsize=9, color=COLOURS["dark_text"])
        ax.set_xticks([])
        ax.set_yticks([])
    if pearson_r is not None:
        fig.suptitle(f"held-out Pearson r = {pearson_r:.3f}", fontsize=9, color=COLOURS["dark_grey"])
    fig.tight_layout()
    return _save(fig, name, out_dir)


# ──────────────────────────────────────────────
# 3. Latency bars
# ──────────────────────────────────────────────

def chart_latency(report: LatencyReport, out_dir: str | Path | None = None) -> Path:
    """Stacked backbone / action-head medians per variant, plus the AR sweep with its fit."""
    names = list(report.variants)
    backbone = [report.variants[n].backbone_forward_ms.median for n in names]
    head = [report.variants[n].action_head_ms.median for n in names]

    n_panels = 2 if report.sweep else 1
    fig, axes = plt.subplots(1, n_panels, figsize=(4.2 * n_panels, 3.0), squeeze=False)
    ax = axes[0][0]
    y = np.arange(len(names))
    ax.barh(y, backbone, color=[VARIANT_COLOURS.get(n, COLOURS["accent"]) for n in names], label="backbone")
    ax.barh(y, head, left=backbone, color=COLOURS["green"], alpha=0.7, label="action head")
    for i, n in enumerate(names):
        ax.text(backbone[i] + head[i], i, f"  {backbone[i] + head[i]:.1f} ms", va="center", fontsize=7,
                color=COLOURS["dark_text"])
    ax.set_yticks(y)
    ax.set_yticklabels(names, fontsize=8)
    ax.set_xscale("log")
    ax.set_xlabel("median ms per control step", fontsize=8, color=COLOURS["dark_grey"])
    ax.legend(fontsize=7, frameon=False, loc="lower right")
    _style_ax(ax)

    if report.sweep:
        ax2 = axes[0][1]
        ks = np.array(sorted(report.sweep))
        totals = np.array([report.sweep[k] for k in ks])
        ax2.plot(ks, totals, "o", color=VARIANT_COLOURS["ar_cot"])
        if report.fit is not None:
            ax2.plot(ks, report.fit.slope * ks + report.fit.intercept, color=COLOURS["dark_grey"], linewidth=1,
                     label=f"slope {report.fit.slope:.2f} ms/token, R² {report.fit.r2:.3f}")
            ax2.legend(fontsize=7, frameon=False)
        ax2.set_xlabel("CoT tokens K", fontsize=8, color=COLOURS["dark_grey"])
        ax2.set_ylabel("total ms", fontsize=8, color=COLOURS["dark_grey"])
        _style_ax(ax2)
    fig.tight_layout()
    return _save(fig, "latency", out_dir)


# ──────────────────────────────────────────────
# 4. Ablation bars
# ──────────────────────────────────────────────

def chart_ablation(table: pd.DataFrame, out_dir: str | Path | None = None) -> Path:
    """Grouped success-rate bars: one group per template column plus the average."""
    columns = [c for c in table.columns if c not in ("variant", "visual_cot", "linguistic_cot")]
    x = np.arange(len(columns))
    width = 0.8 / max(len(table), 1)
    fig, ax = plt.subplots(figsize=(6.0, 3.0))
    for i, (_, row) in enumerate(table.iterrows()):
        ax.bar(x + i * width, [row[c] for c in columns], width,
               color=VARIANT_COLOURS.get(row["variant"], COLOURS["accent"]), label=row["variant"])
    ax.set_xticks(x + width * (len(table) - 1) / 2)
    ax.set_xticklabels(columns, fontsize=8)
    ax.set_ylabel("success %", fontsize=8, color=COLOURS["dark_grey"])
    ax.set_ylim(0, 100)
    ax.legend(fontsize=7, frameon=False, ncol=2)
    _style_ax(ax)
    fig.tight_layout()
    return _save(fig, "ablation", out_dir)
