"""CSV reports and the matplotlib figures rendered next to them."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .graph import Graph, degree_histogram
from .search import EvalResult
from .trainer import TrainingLog


def _write_rows(path: str | Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_eval_report(path: str | Path, result: EvalResult) -> None:
    """Per-query evaluation rows: query_id, found, dcs, hops."""
    rows = [
        [i, int(result.found[i]), int(result.dcs[i]), int(result.hops[i])]
        for i in range(len(result.found))
    ]
    _write_rows(path, ["query_id", "found", "dcs", "hops"], rows)


def write_degree_histogram(path: str | Path, g: Graph) -> None:
    hist = degree_histogram(g)
    _write_rows(path, ["outdegree", "count"], sorted(hist.items()))


def plot_degree_histogram(path: str | Path, g: Graph, title: str = "Outdegree histogram") -> None:
    hist = degree_histogram(g)
    degrees = sorted(hist)
    counts = [hist[d] for d in degrees]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(degrees, counts, color="tab:blue")
    ax.set_xlabel("outdegree")
    ax.set_ylabel("vertices")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_sweep(path: str | Path, rows: list[dict]) -> None:
    """Recall-vs-DCS curve rows: graph label, ef, mean_dcs, recall_at_1."""
    _write_rows(
        path,
        ["graph", "ef", "mean_dcs", "recall_at_1"],
        [[r["graph"], r["ef"], repr(r["mean_dcs"]), repr(r["recall_at_1"])] for r in rows],
    )


def plot_sweep(path: str | Path, rows: list[dict], title: str = "Recall@1 vs DCS") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = []
    for label in dict.fromkeys(r["graph"] for r in rows):
        pts = sorted(
            ((r["mean_dcs"], r["recall_at_1"]) for r in rows if r["graph"] == label)
        )
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
        labels.append(label)
    ax.set_xlabel("mean distance computations")
    ax.set_ylabel("Recall@1")
    ax.set_title(title)
    if labels:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def hub_rows(g: Graph, visit_counts: np.ndarray, nn_counts: np.ndarray, top_n: int) -> list[dict]:
    """Most-visited vertices, the start vertex first unconditionally."""
    order = np.lexsort((np.arange(g.n_vertices), -visit_counts))
    ranked = [v for v in order if v != g.start_vertex][: max(top_n - 1, 0)]
    outdeg = g.outdegrees()
    rows = []
    for rank, v in enumerate([g.start_vertex] + [int(v) for v in ranked]):
        rows.append(
            {
                "rank": rank,
                "vertex": int(v),
                "visits": int(visit_counts[v]),
                "outdegree": int(outdeg[v]),
                "nn_count": int(nn_counts[v]),
                "is_start": int(v == g.start_vertex),
            }
        )
    return rows


def write_hubs(path: str | Path, rows: list[dict]) -> None:
    _write_rows(
        path,
        ["rank", "vertex", "visits", "outdegree", "nn_count", "is_start"],
        [
            [r["rank"], r["vertex"], r["visits"], r["outdegree"], r["nn_count"], r["is_start"]]
            for r in rows
        ],
    )


def plot_hubs(path: str | Path, rows: list[dict], title: str = "Visit frequencies") -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    xs = range(len(rows))
    colors = ["tab:red" if r["is_start"] else "tab:blue" for r in rows]
    ax.bar(xs, [r["visits"] for r in rows], color=colors)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(
        ["start" if r["is_start"] else str(r["vertex"]) for r in rows],
        rotation=90,
        fontsize=6,
    )
    ax.set_ylabel("visits")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training(path: str | Path, log: TrainingLog, title: str = "Training") -> None:
    epochs = [r.epoch for r in log.rows]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    axes[0].plot(epochs, [r.mean_reward for r in log.rows], label="train")
    axes[0].plot(epochs, [r.val_reward for r in log.rows], label="val")
    axes[0].set_title("mean reward")
    axes[0].legend()
    axes[1].plot(epochs, [r.val_recall for r in log.rows], color="tab:green")
    axes[1].set_title("val Recall@1")
    axes[2].plot(epochs, [r.val_dcs for r in log.rows], color="tab:orange")
    axes[2].set_title("val mean DCS")
    for ax in axes:
        ax.set_xlabel("epoch")
        ax.grid(True, alpha=0.3)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_edge_weights(path: str | Path, g: Graph, weights: np.ndarray) -> None:
    """Weight dump for inspection: src, dst, weight per edge."""
    src = g.edge_sources()
    rows = [
        [int(src[e]), int(g.neighbors[e]), repr(float(weights[e]))] for e in range(g.n_edges)
    ]
    _write_rows(path, ["src", "dst", "weight"], rows)
