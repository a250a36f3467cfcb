"""Human-readable reports: a results table (markdown + CSV) and matplotlib
figures rendered to files next to it.

Figures: per-method accuracy bars, each run's expert win distribution, and
accuracy-matrix heatmaps.
"""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

PRETTY = {
    "mob": "MoB",
    "naive_finetune": "Naive Fine-tuning",
    "random_assignment": "Random Assignment",
    "monolithic_ewc": "Monolithic EWC",
    "gated_moe": "Gated MoE",
}


def _ordered(agg):
    methods = agg["methods"]
    return sorted(methods, key=lambda m: -methods[m]["avg_accuracy"])


def write_table(agg, out_dir) -> Path:
    """report.md and report.csv, methods by descending average accuracy."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    order = _ordered(agg)
    methods = agg["methods"]

    md = out_dir / "report.md"
    lines = ["# Split-digits continual learning results", "",
             "| Method | Avg. Accuracy | Forgetting | Seeds |",
             "|---|---|---|---|"]
    for m in order:
        e = methods[m]
        forg = (f"{e['forgetting']:.4f} ± {e['forgetting_std']:.4f}"
                if "forgetting" in e else "n/a")
        lines.append(
            f"| {PRETTY.get(m, m)} | {e['avg_accuracy']:.4f} ± "
            f"{e['avg_accuracy_std']:.4f} | {forg} | {len(e['seeds'])} |")
    if agg.get("welch_avg_accuracy"):
        lines += ["", "## Welch t-tests (avg. accuracy)", "",
                  "| Pair | t | p |", "|---|---|---|"]
        for pair, v in sorted(agg["welch_avg_accuracy"].items()):
            lines.append(f"| {pair} | {v['t']:.3f} | {v['p']:.2e} |")
    md.write_text("\n".join(lines) + "\n")

    with open(out_dir / "report.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "avg_accuracy", "avg_accuracy_std",
                    "forgetting", "forgetting_std", "n_seeds"])
        for m in order:
            e = methods[m]
            w.writerow([m, f"{e['avg_accuracy']:.6f}",
                        f"{e['avg_accuracy_std']:.6f}",
                        f"{e.get('forgetting', float('nan')):.6f}",
                        f"{e.get('forgetting_std', float('nan')):.6f}",
                        len(e["seeds"])])
    return md


def plot_method_comparison(agg, path):
    order = _ordered(agg)
    methods = agg["methods"]
    accs = [methods[m]["avg_accuracy"] for m in order]
    errs = [methods[m]["avg_accuracy_std"] for m in order]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(order)), accs, yerr=errs, capsize=4, color="#3b6ea5")
    ax.set_xticks(range(len(order)))
    ax.set_xticklabels([PRETTY.get(m, m) for m in order],
                       rotation=20, ha="right")
    ax.set_ylabel("Average accuracy")
    ax.set_ylim(0, 1)
    ax.set_title("Average accuracy across seeds")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_win_distribution(summary, path):
    """Horizontal bars of each expert's share of won batches."""
    wins = np.asarray(summary.win_counts, dtype=float)
    if wins.sum() == 0:
        return
    share = wins / wins.sum()
    fig, ax = plt.subplots(figsize=(6, 0.6 * len(share) + 1.2))
    ax.barh(range(len(share)), share, color="#3b6ea5")
    for i, s in enumerate(share):
        ax.text(s + 0.01, i, f"{100 * s:.1f}%", va="center")
    ax.set_yticks(range(len(share)))
    ax.set_yticklabels([f"Expert {i}" for i in range(len(share))])
    ax.set_xlabel("Share of batches won")
    ax.set_xlim(0, 1)
    ax.set_title(f"{PRETTY.get(summary.method, summary.method)} "
                 f"(seed {summary.seed})")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_accuracy_matrix(summary, path):
    a = np.asarray(summary.acc_matrix)
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(a, vmin=0, vmax=1, cmap="viridis")
    ax.set_xlabel("Evaluated task")
    ax.set_ylabel("After training task")
    ax.set_xticks(range(a.shape[1]))
    ax.set_yticks(range(a.shape[0]))
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            ax.text(j, i, f"{a[i, j]:.2f}", ha="center", va="center",
                    color="white" if a[i, j] < 0.5 else "black", fontsize=8)
    fig.colorbar(im, ax=ax, label="accuracy")
    ax.set_title(f"{PRETTY.get(summary.method, summary.method)} "
                 f"(seed {summary.seed})")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_figures(agg, summaries, out_dir) -> list:
    """All report figures into out_dir/figures; returns written paths."""
    fig_dir = Path(out_dir) / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []
    p = fig_dir / "avg_accuracy.png"
    plot_method_comparison(agg, p)
    written.append(p)
    for s in summaries:
        if s.win_counts:
            p = fig_dir / f"wins_{s.method}_seed{s.seed}.png"
            plot_win_distribution(s, p)
            written.append(p)
        p = fig_dir / f"acc_matrix_{s.method}_seed{s.seed}.png"
        plot_accuracy_matrix(s, p)
        written.append(p)
    return written
