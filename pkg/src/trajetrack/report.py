"""CSV summaries and matplotlib figures for sweeps and training runs."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SWEEP_COLUMNS = ("strategy", "bias", "beam", "run", "MOTA", "IDF1", "IDSW")
SWEEP_METRICS = ("MOTA", "IDF1", "IDSW")

_LINESTYLE = {"pbs": "-", "gbs": "--", "bm": ":"}


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in SWEEP_COLUMNS})


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        out = []
        for r in csv.DictReader(fh):
            out.append({"strategy": r["strategy"], "bias": float(r["bias"]), "beam": int(r["beam"]),
                        "run": int(r["run"]), "MOTA": float(r["MOTA"]), "IDF1": float(r["IDF1"]),
                        "IDSW": int(r["IDSW"])})
        return out


def summarize(rows, metrics=SWEEP_METRICS) -> list[dict]:
    """Mean/min/max over runs for every (strategy, bias, beam) cell."""
    groups = defaultdict(list)
    for r in rows:
        groups[(r["strategy"], r["bias"], r["beam"])].append(r)
    out = []
    for (strategy, bias, beam), rs in groups.items():
        rec = {"strategy": strategy, "bias": bias, "beam": beam, "runs": len(rs)}
        for m in metrics:
            vals = [float(r[m]) for r in rs]
            rec[f"{m}_mean"] = sum(vals) / len(vals)
            rec[f"{m}_min"] = min(vals)
            rec[f"{m}_max"] = max(vals)
        out.append(rec)
    return out


def write_summary_csv(path, summary) -> None:
    if not summary:
        Path(path).write_text("", encoding="utf-8")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]))
        w.writeheader()
        w.writerows(summary)


def plot_sweep(summary, metric: str, path, title: str | None = None) -> None:
    """One line per (strategy, beam) over bias, with a shaded min-max band.

    PBS is drawn solid and GBS dashed, each beam width in its own colour.
    """
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    beams = sorted({s["beam"] for s in summary})
    colours = plt.get_cmap("viridis")
    for (strategy, beam) in sorted({(s["strategy"], s["beam"]) for s in summary}):
        cell = sorted((s for s in summary if s["strategy"] == strategy and s["beam"] == beam),
                      key=lambda s: s["bias"])
        xs = list(range(len(cell)))
        colour = colours(beams.index(beam) / max(len(beams) - 1, 1) * 0.85)
        ax.plot(xs, [s[f"{metric}_mean"] for s in cell], _LINESTYLE.get(strategy, "-"),
                color=colour, marker="o", markersize=3, linewidth=1.5,
                label=f"{strategy.upper()} B={beam}")
        ax.fill_between(xs, [s[f"{metric}_min"] for s in cell], [s[f"{metric}_max"] for s in cell],
                        color=colour, alpha=0.2, linewidth=0)
        ax.set_xticks(xs)
        ax.set_xticklabels([f"{s['bias']:g}" for s in cell])
    ax.set_xlabel("Bias")
    ax.set_ylabel(metric)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_history(history, path) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    epochs = [h["epoch"] for h in history]
    ax.plot(epochs, [h["train_nll"] for h in history], label="train")
    ax.plot(epochs, [h["val_nll"] for h in history], label="validation")
    finite = [h["val_nll"] for h in history if math.isfinite(h["val_nll"])]
    if finite and min(finite) > 0:
        ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean NLL per step")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "lr", "train_nll", "val_nll"])
        w.writeheader()
        w.writerows(history)
