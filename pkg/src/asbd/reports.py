"""Report artifacts: delimited files plus rendered figures.

Every report is written twice — a CSV (UTF-8, LF, means with 3 decimals) that
downstream tooling parses, and a PNG rendered from the same data. Readers for
the CSVs live here too so round-trips stay in one place.

Files:
  history.csv  epoch,train_loss,valid_bleu
  summary.csv  system,mean_sentence_bleu
  buckets.csv  bucket,count,<system...>   (empty cell for an empty bucket)
"""

from __future__ import annotations

import csv

from .metrics import BucketReport


def write_history_csv(path, history) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("epoch,train_loss,valid_bleu\n")
        for h in history:
            f.write(f"{h.epoch},{h.train_loss:.6f},{h.valid_bleu:.3f}\n")


def load_history_csv(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [
            {"epoch": int(r["epoch"]), "train_loss": float(r["train_loss"]),
             "valid_bleu": float(r["valid_bleu"])}
            for r in csv.DictReader(f)
        ]


def write_summary_csv(path, rows: list[tuple[str, float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("system,mean_sentence_bleu\n")
        for system, mean in rows:
            f.write(f"{system},{mean:.3f}\n")


def load_summary_csv(path) -> list[tuple[str, float]]:
    with open(path, encoding="utf-8") as f:
        return [(r["system"], float(r["mean_sentence_bleu"])) for r in csv.DictReader(f)]


def write_buckets_csv(path, report: BucketReport) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("bucket,count," + ",".join(report.systems) + "\n")
        for label, count, means in zip(report.labels, report.counts, report.means):
            cells = ["" if m is None else f"{m:.3f}" for m in means]
            f.write(f"{label},{count}," + ",".join(cells) + "\n")


def load_buckets_csv(path) -> dict:
    with open(path, encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        systems = header[2:]
        rows = []
        for row in reader:
            means = [None if cell == "" else float(cell) for cell in row[2:]]
            rows.append({"bucket": row[0], "count": int(row[1]), "means": means})
    return {"systems": systems, "rows": rows}


# --- figures -------------------------------------------------------------------

def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_history_png(path, history) -> None:
    """Training loss and validation BLEU curves on twin axes."""
    plt = _plt()
    epochs = [h.epoch for h in history]
    fig, ax1 = plt.subplots(figsize=(6.4, 4.0))
    ax1.plot(epochs, [h.train_loss for h in history], color="tab:red", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:red")
    ax1.tick_params(axis="y", labelcolor="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [h.valid_bleu for h in history], color="tab:blue", label="valid BLEU")
    ax2.set_ylabel("validation mean sentence BLEU", color="tab:blue")
    ax2.tick_params(axis="y", labelcolor="tab:blue")
    ax1.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_summary_png(path, rows: list[tuple[str, float]]) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    names = [s for s, _ in rows]
    vals = [v for _, v in rows]
    ax.bar(names, vals, color="tab:blue", width=0.5)
    for i, v in enumerate(vals):
        ax.text(i, v, f"{v:.2f}", ha="center", va="bottom", fontsize=9)
    ax.set_ylabel("mean sentence BLEU")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_buckets_png(path, report: BucketReport) -> None:
    """Per-bucket mean sentence BLEU, one line per system."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    xs = range(len(report.labels))
    for k, system in enumerate(report.systems):
        ys = [report.means[b][k] for b in range(len(report.labels))]
        pts = [(x, y) for x, y in zip(xs, ys) if y is not None]
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=system)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(report.labels)
    ax.set_xlabel("source length bucket")
    ax.set_ylabel("mean sentence BLEU")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
