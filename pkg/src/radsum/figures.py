"""Static PNG figures rendered next to their delimited counterparts."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_loss_curve(losses: list[float], path: str | Path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(range(len(losses)), losses, linewidth=1.2)
    ax.set_xlabel("optimizer step")
    ax.set_ylabel("masked cross-entropy")
    ax.set_title("training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_per_sample_rouge(rows: list[tuple[str, float, float, float]], path: str | Path) -> Path:
    """Grouped bars of per-sample ROUGE-1/2/L F1, one group per sample."""
    path = Path(path)
    n = len(rows)
    ids = [r[0] for r in rows]
    width = 0.27
    xs = range(n)
    fig, ax = plt.subplots(figsize=(max(7, 0.6 * n), 4))
    ax.bar([x - width for x in xs], [r[1] for r in rows], width, label="rouge-1")
    ax.bar(list(xs), [r[2] for r in rows], width, label="rouge-2")
    ax.bar([x + width for x in xs], [r[3] for r in rows], width, label="rouge-l")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(ids, rotation=60, ha="right", fontsize=7)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("F1")
    ax.set_title("per-sample ROUGE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
