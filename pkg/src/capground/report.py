"""Report rendering: delimited outputs plus matplotlib figures."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def write_loss_trace(trace, csv_path, fig_path=None):
    """Loss trace rows (step, loss, retrieval_top1) to CSV and a figure."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "retrieval_top1"])
        for step, loss, top1 in trace:
            writer.writerow([step, f"{loss:.6f}", f"{top1:.4f}"])
    if fig_path and trace:
        steps = [t[0] for t in trace]
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
        ax1.plot(steps, [t[1] for t in trace], lw=0.8)
        ax1.set_ylabel("batch loss")
        ax2.plot(steps, [t[2] for t in trace], lw=0.8, color="tab:green")
        ax2.set_ylabel("retrieval top-1")
        ax2.set_xlabel("step")
        fig.tight_layout()
        fig.savefig(fig_path, dpi=110)
        plt.close(fig)


def write_pr_curves(curves, csv_path, fig_path=None, class_names=None):
    """Per-class PR curves to CSV and a single overlay figure.

    ``curves`` maps class key -> PRCurve; ``class_names`` optionally maps the
    key to a display name.
    """
    class_names = class_names or {}
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "recall", "precision"])
        for key, curve in curves.items():
            name = class_names.get(key, key)
            for r, p in zip(curve.recalls, curve.precisions):
                writer.writerow([name, f"{r:.6f}", f"{p:.6f}"])
    if fig_path:
        fig, ax = plt.subplots(figsize=(6, 5))
        for key, curve in curves.items():
            name = class_names.get(key, key)
            if len(curve.recalls):
                ax.plot(curve.recalls, curve.precisions, lw=1.0,
                        label=f"{name} (AP={curve.ap:.3f})")
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.05)
        if curves:
            ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(fig_path, dpi=110)
        plt.close(fig)
