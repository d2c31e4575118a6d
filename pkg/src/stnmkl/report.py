"""Render an experiment report: text table, accuracy CSV and figures."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _rates(report: dict) -> list:
    return sorted({r["rate"] for r in report["results"]}, reverse=True)


def _classifiers(report: dict) -> list:
    seen = []
    for r in report["results"]:
        if r["classifier"] not in seen:
            seen.append(r["classifier"])
    return seen


def accuracy_table(report: dict) -> dict:
    """{classifier: {rate: mean accuracy}}."""
    table = {c: {} for c in _classifiers(report)}
    for r in report["results"]:
        table[r["classifier"]][r["rate"]] = r["mean_accuracy"]
    return table


def format_table(report: dict) -> str:
    """Human-readable accuracy table, one row per rate."""
    clfs = _classifiers(report)
    table = accuracy_table(report)
    chance = report["chance_rate"]
    lines = [
        f"classes: {', '.join(report['classes'])}  (n={report['n_events']})",
        f"chance: uniform {chance['uniform']:.2f}%  majority {chance['majority']:.2f}%",
        "",
    ]
    width = max(12, *(len(c) + 2 for c in clfs))
    lines.append("rate (Hz)".ljust(12) + "".join(c.rjust(width) for c in clfs))
    for rate in _rates(report):
        cells = "".join(
            (f"{table[c][rate]:.2f}" if rate in table[c] else "-").rjust(width) for c in clfs
        )
        lines.append(f"{rate:g}".ljust(12) + cells)
    return "\n".join(lines) + "\n"


def write_accuracy_csv(report: dict, path) -> None:
    """Comma-separated accuracy by rate; a leading '#' header keeps gnuplot happy."""
    clfs = _classifiers(report)
    table = accuracy_table(report)
    uniform = report["chance_rate"]["uniform"]
    with open(path, "w", newline="") as fh:
        fh.write("# rate," + ",".join(clfs) + ",chance\n")
        w = csv.writer(fh)
        for rate in _rates(report):
            w.writerow([f"{rate:g}"] + [repr(table[c].get(rate, float("nan"))) for c in clfs] + [repr(uniform)])


def plot_accuracy(report: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    table = accuracy_table(report)
    for clf, row in table.items():
        rates = sorted(row)
        ax.plot(rates, [row[r] for r in rates], marker="o", label=clf)
    ax.axhline(report["chance_rate"]["uniform"], color="grey", ls="--", label="chance")
    ax.set_xscale("log")
    ax.set_xlabel("sampling rate (Hz)")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    ax.legend(loc="lower right", fontsize="small")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_confusion(result: dict, classes, path) -> None:
    cm = np.asarray(result["confusion"], dtype=float)
    fig, ax = plt.subplots(figsize=(1.2 * len(classes) + 2, 1.2 * len(classes) + 1.5))
    im = ax.imshow(cm, vmin=0, vmax=100, cmap="Blues")
    ax.set_xticks(range(len(classes)), classes, rotation=45, ha="right")
    ax.set_yticks(range(len(classes)), classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, f"{cm[i, j]:.1f}", ha="center", va="center", color="white" if cm[i, j] > 50 else "black")
    ax.set_title(f"{result['classifier']} @ {result['rate']:g} Hz")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_report(report: dict, out_dir, figures: bool = True) -> list:
    """Write table, CSV and figures into ``out_dir``; return the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    (out / "accuracy.txt").write_text(format_table(report))
    written.append(out / "accuracy.txt")
    write_accuracy_csv(report, out / "accuracy.csv")
    written.append(out / "accuracy.csv")
    if figures:
        plot_accuracy(report, out / "accuracy_vs_rate.png")
        written.append(out / "accuracy_vs_rate.png")
        for r in report["results"]:
            name = f"confusion_{r['classifier']}_{r['rate']:g}Hz.png"
            plot_confusion(r, report["classes"], out / name)
            written.append(out / name)
    return written


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())


__all__ = [
    "accuracy_table",
    "format_table",
    "load_report",
    "plot_accuracy",
    "plot_confusion",
    "render_report",
    "write_accuracy_csv",
]
