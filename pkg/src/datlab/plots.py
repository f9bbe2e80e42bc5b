"""Accuracy-vs-length figures rendered alongside the delimited reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evaluation import EvalReport, HIGHLIGHT_THRESHOLD


def plot_length_curves(reports, out_path, title: str = "", l_train: int | None = None) -> None:
    """One joint-accuracy curve per report over the shared length grid."""
    if isinstance(reports, EvalReport):
        reports = [reports]
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    for rep in reports:
        xs = [row.n for row in rep.rows]
        ys = [row.joint_acc for row in rep.rows]
        ax.plot(xs, ys, marker="o", markersize=3.5, linewidth=1.4,
                label=rep.label or rep.arch)
    ax.axhline(HIGHLIGHT_THRESHOLD, color="grey", linewidth=0.8, linestyle="--",
               label=f"{HIGHLIGHT_THRESHOLD:.2f}")
    if l_train is not None:
        ax.axvline(l_train, color="grey", linewidth=0.8, linestyle=":",
                   label=f"train limit n={l_train}")
    ax.set_xlabel("key-value pairs n")
    ax.set_ylabel("joint accuracy")
    ax.set_ylim(-0.02, 1.02)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8, loc="best")
    ax.grid(alpha=0.25)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def plot_training_curve(epoch_stats, out_path, title: str = "") -> None:
    """Mean loss per epoch with phase boundaries marked."""
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    xs = [s.epoch for s in epoch_stats]
    ys = [s.mean_loss for s in epoch_stats]
    ax.plot(xs, ys, linewidth=1.2)
    prev_phase = None
    for s in epoch_stats:
        if prev_phase is not None and s.phase != prev_phase:
            ax.axvline(s.epoch, color="red", linewidth=0.8, linestyle="--")
        prev_phase = s.phase
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_yscale("log")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.25)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
