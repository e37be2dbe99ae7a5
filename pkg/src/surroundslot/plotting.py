"""Report figures written to image files (headless)."""

from __future__ import annotations

from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import ROW_NAMES, EvalReport  # noqa: E402
from .geometry import SLOT_CLASSES  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.8),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 11,
    "legend.fontsize": 9,
}
CLASS_COLORS = {"regular": "#4c72b0", "handicapped": "#dd8452", "ev": "#55a868"}
# Distinct dashes keep coincident curves (common on clean data) visible.
CLASS_DASHES = {"regular": "-", "handicapped": "--", "ev": ":"}


def _envelope(recall: List[float], precision: List[float]):
    r = np.concatenate([[0.0], recall])
    p = np.concatenate([[precision[0]], precision])
    return r, np.maximum.accumulate(p[::-1])[::-1]


def plot_pr_curves(report: EvalReport, path) -> Path:
    """Precision-recall curve (raw and interpolated) for every class."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for c in SLOT_CLASSES:
            rec, prec = report.curves.get(c, ([], []))
            color = CLASS_COLORS[c.value]
            label = f"{ROW_NAMES[c]} (AP {report.per_class[c].ap:.3f})"
            if not rec:
                ax.plot([], [], color=color, label=label + ", no detections")
                continue
            ax.plot(rec, prec, "o", ms=3, color=color, alpha=0.5)
            r, p = _envelope(rec, prec)
            ax.step(r, p, where="pre", color=color, ls=CLASS_DASHES[c.value], lw=2, label=label)
        ax.set_xlim(0.0, 1.02)
        ax.set_ylim(0.0, 1.05)
        ax.set_xlabel("Recall")
        ax.set_ylabel("Precision")
        ax.set_title(f"Precision-recall at IoU {report.iou_threshold:g} (mAP {report.mean_ap:.3f})")
        ax.legend(loc="lower left")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_metric_bars(report: EvalReport, path) -> Path:
    """Grouped bars of precision, recall, F1 and AP for each report row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = report.rows()
    names = [n for n, _ in rows]
    metrics = ("precision", "recall", "f1", "ap")
    x = np.arange(len(rows))
    width = 0.2
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for k, m in enumerate(metrics):
            ax.bar(x + (k - 1.5) * width, [getattr(r, m) for _, r in rows], width,
                   label="AP" if m == "ap" else m.capitalize())
        ax.set_xticks(x)
        ax.set_xticklabels(names)
        ax.set_ylim(0.0, 1.05)
        ax.set_ylabel("Score")
        ax.legend(loc="lower center", bbox_to_anchor=(0.5, 1.0), ncol=4, frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def write_report_figures(report: EvalReport, out_dir) -> List[Path]:
    out = Path(out_dir)
    return [plot_pr_curves(report, out / "pr_curves.png"), plot_metric_bars(report, out / "metrics.png")]
