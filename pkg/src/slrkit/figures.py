"""Matplotlib figures rendered next to the TSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .harness import AblationRow, RobustRow  # noqa: E402
from .metrics import EditStats, wer  # noqa: E402
from .train import EpochLog  # noqa: E402

__all__ = ["training_curves", "ablation_figure", "robustness_figure",
           "eval_histogram"]

_FIGSIZE = (7.0, 4.2)


def training_curves(logs: list[EpochLog], path: str | Path) -> None:
    epochs = [log.epoch for log in logs]
    fig, (ax_loss, ax_wer) = plt.subplots(1, 2, figsize=_FIGSIZE)
    for key, label in (("l_inter", "inter"), ("l_intra", "intra"),
                       ("l_refine", "refine"), ("l_bta", "bottleneck")):
        ax_loss.plot(epochs, [getattr(log, key) for log in logs], label=label)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(fontsize=8)
    ax_loss.grid(alpha=0.3)

    ax_wer.plot(epochs, [log.dev_wer for log in logs], color="tab:red",
                label="dev WER (%)")
    ax_wer.set_xlabel("epoch")
    ax_wer.set_ylabel("dev WER (%)", color="tab:red")
    ax_blank = ax_wer.twinx()
    ax_blank.plot(epochs, [log.blank_frac for log in logs], color="tab:blue",
                  linestyle="--", label="blank fraction")
    ax_blank.set_ylabel("blank fraction", color="tab:blue")
    ax_wer.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_figure(rows: list[AblationRow], path: str | Path) -> None:
    labels = [f"{r.table[:4]}:{r.row}" for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    width = 0.38
    ax.bar([i - width / 2 for i in x], [r.dev_wer for r in rows], width,
           label="dev")
    ax.bar([i + width / 2 for i in x], [r.test_wer for r in rows], width,
           label="test")
    ax.set_xticks(list(x), labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("WER (%)")
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def robustness_figure(rows: list[RobustRow], path: str | Path) -> None:
    labels = [r.transform.name for r in rows]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.bar(labels, [r.wer for r in rows], color="tab:purple")
    mode = rows[0].r_mode if rows else "?"
    ax.set_ylabel("WER (%)")
    ax.set_xlabel(f"transform (r_mode={mode})")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def eval_histogram(rows: list[tuple[str, EditStats]], path: str | Path) -> None:
    wers = [wer(st) for _, st in rows]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.hist(wers, bins=20, color="tab:green", edgecolor="black")
    ax.set_xlabel("per-video WER (%)")
    ax.set_ylabel("videos")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
