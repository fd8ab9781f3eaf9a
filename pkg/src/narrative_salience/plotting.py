"""Figures written next to the CSV/JSON outputs (Agg backend, PNG)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import EvalReport  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_loss_curve(losses: Sequence[tuple[int, float]], path, title: str = "training loss") -> Path:
    if not losses:
        raise ValueError("no loss values to plot")
    steps, values = zip(*losses)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, values, lw=1, color="tab:blue")
    if len(values) >= 20:
        k = max(5, len(values) // 20)
        smooth = np.convolve(values, np.ones(k) / k, mode="valid")
        ax.plot(steps[k - 1 :], smooth, lw=2, color="tab:orange", label=f"moving mean ({k})")
        ax.legend()
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    return _save(fig, path)


def plot_metrics(report: EvalReport, path) -> Path:
    """Bar chart of mean ρ and AUC (story mode) or window AUC (window mode) per system."""
    names = [s.name for s in report.systems]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(5, 1.1 * len(names)), 3.8))
    if report.mode == "story":
        rho = [s.rho.mean if s.rho and s.rho.mean is not None else np.nan for s in report.systems]
        auc = [s.auc.mean if s.auc.mean is not None else np.nan for s in report.systems]
        ax.bar(x - 0.2, rho, 0.4, label="Spearman ρ")
        ax.bar(x + 0.2, auc, 0.4, label="AUC")
        ax.axhline(0.5, color="grey", ls=":", lw=1)
        ax.axhline(0.0, color="black", lw=0.8)
        ax.legend()
    else:
        auc = [s.auc.mean if s.auc.mean is not None else np.nan for s in report.systems]
        ax.bar(x, auc, 0.6, color="tab:green")
        ax.set_ylabel("window AUC")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_title(f"{report.mode}-level metrics ({report.stories} stories)")
    return _save(fig, path)


def plot_window_auc(report: EvalReport, path) -> Path:
    """Window AUC per turning-point type, one line per system."""
    if report.mode != "window":
        raise ValueError("window AUC figure needs a window-mode report")
    fig, ax = plt.subplots(figsize=(6, 3.8))
    tps = [f"TP{t}" for t in range(1, 6)]
    for s in report.systems:
        ys = [s.tp_auc[t].mean if t in s.tp_auc else np.nan for t in tps]
        ax.plot(range(1, 6), ys, marker="o", label=s.name)
    ax.set_xticks(range(1, 6))
    ax.set_xticklabels(tps)
    ax.set_ylabel("window AUC")
    ax.legend(fontsize=8)
    return _save(fig, path)


def report_figures(report: EvalReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    paths = [plot_metrics(report, out / "metrics.png")]
    if report.mode == "window":
        paths.append(plot_window_auc(report, out / "window_auc.png"))
    return paths
