"""Comparison figures for experiment summaries.

One grouped bar chart per experiment: metrics on the x axis, one bar per
approach, everything scaled to the worst (highest) approach average, which
is how the comparisons read best across metrics with wildly different units.
"""

from __future__ import annotations

from typing import Mapping

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import METRIC_NAMES

_LABELS = {
    "gpus_used": "# GPUs",
    "memory_wastage": "Mem\nwastage",
    "compute_wastage": "Compute\nwastage",
    "availability": "Avail-\nability",
    "migration_size": "Migration\nsize",
    "pending_model_size": "Pending\nsize",
    "sequential_migrations": "Seq.\nmigrations",
    "memory_utilization": "Mem\nutil",
    "compute_utilization": "Compute\nutil",
}


def render_normalized_metrics(
    normalized: Mapping[str, Mapping[str, float]],
    path: str,
    title: str = "Normalized comparison",
) -> None:
    """Save a grouped bar chart of normalized per-approach averages."""
    approaches = list(normalized)
    n_metrics = len(METRIC_NAMES)
    n_approaches = max(1, len(approaches))
    width = 0.8 / n_approaches

    fig, ax = plt.subplots(figsize=(max(8.0, 1.1 * n_metrics), 3.6))
    for i, approach in enumerate(approaches):
        values = [normalized[approach].get(m, 0.0) for m in METRIC_NAMES]
        positions = [x + (i - (n_approaches - 1) / 2) * width for x in range(n_metrics)]
        ax.bar(positions, values, width=width, label=approach)

    ax.set_xticks(range(n_metrics))
    ax.set_xticklabels([_LABELS[m] for m in METRIC_NAMES], fontsize=8)
    ax.set_ylabel("normalized value")
    ax.set_ylim(bottom=min(0.0, min((min(v.values(), default=0.0) for v in normalized.values()), default=0.0)))
    ax.set_title(title, fontsize=10)
    ax.legend(fontsize=8, ncol=min(5, n_approaches), frameon=False)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
