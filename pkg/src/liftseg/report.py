"""Metric reports: delimited text plus matplotlib figures written to disk."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PLOT_STYLE = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "liftseg",
}

# no version string, so figures are byte-stable across matplotlib installs
_PNG_METADATA = {"Software": None}


def metrics_rows(result):
    rows = [("overall", "all", result["overall"]["mAP"], result["overall"]["mAP50"], result["overall"]["mAP25"])]
    for c, v in sorted(result["per_class"].items()):
        rows.append(("class", str(c), v["mAP"], v["mAP50"], v["mAP25"]))
    return rows


def format_table(result, sep="\t"):
    lines = [sep.join(("scope", "class", "mAP", "mAP50", "mAP25"))]
    for scope, cls, a, b, c in metrics_rows(result):
        lines.append(sep.join((scope, cls, f"{a:.6f}", f"{b:.6f}", f"{c:.6f}")))
    return "\n".join(lines) + "\n"


def to_json(result):
    clean = {
        "overall": result["overall"],
        "per_class": {str(c): v for c, v in sorted(result["per_class"].items())},
    }
    return json.dumps(clean, indent=2, sort_keys=True) + "\n"


def plot_ap_bars(result, path):
    classes = sorted(result["per_class"])
    with plt.rc_context(PLOT_STYLE):
        fig, ax = plt.subplots(figsize=(max(3.0, 0.9 * len(classes) + 1.5), 2.8))
        width = 0.27
        for i, key in enumerate(("mAP", "mAP50", "mAP25")):
            vals = [result["per_class"][c][key] for c in classes]
            ax.bar([x + (i - 1) * width for x in range(len(classes))], vals, width, label=key)
        ax.set_xticks(range(len(classes)))
        ax.set_xticklabels([f"class {c}" for c in classes])
        ax.set_ylim(0, 1.2)
        ax.set_yticks([0, 0.25, 0.5, 0.75, 1.0])
        ax.set_ylabel("average precision")
        ax.legend(loc="upper center", ncol=3, frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_METADATA)
        plt.close(fig)


def plot_pr_curves(result, path, threshold=0.50):
    with plt.rc_context(PLOT_STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.0))
        for (c, t), (recall, precision) in sorted(result["curves"].items()):
            if abs(t - threshold) > 1e-12 or len(recall) == 0:
                continue
            ax.step(recall, precision, where="post", label=f"class {c}")
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.05)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_title(f"IoU >= {threshold:.2f}")
        if ax.lines:
            ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_METADATA)
        plt.close(fig)


def write_report(result, out_dir):
    """Write metrics.tsv, metrics.json and the two figures; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "tsv": out / "metrics.tsv",
        "json": out / "metrics.json",
        "ap_bars": out / "ap_per_class.png",
        "pr_curves": out / "pr_curves.png",
    }
    paths["tsv"].write_text(format_table(result))
    paths["json"].write_text(to_json(result))
    plot_ap_bars(result, paths["ap_bars"])
    plot_pr_curves(result, paths["pr_curves"])
    return paths
