"""Figure rendering for optimisation results.

Writes PNG figures next to the delimited exports: the three 2-D projections
of the objective space (third objective as color) and the average-rank bar
chart. Lower rank means the mitigation was consistently stronger in top
portfolios, so rank-1 bars are the shortest.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .optimise import ParetoFront, RankReport

_PROJECTIONS = (
    ("likelihood", "impact", "availability", 0, 1, 2),
    ("likelihood", "availability", "impact", 0, 2, 1),
    ("impact", "availability", "likelihood", 1, 2, 0),
)


def render_front_projections(
    fronts: Sequence[ParetoFront],
    out_dir: str | Path,
    stem: str = "front",
    dpi: int = 120,
) -> list[Path]:
    """One scatter per objective pair; multiple fronts get distinct markers."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    markers = ["o", "s", "^", "D", "v", "P", "X", "*"]
    written = []
    for x_name, y_name, c_name, xi, yi, ci in _PROJECTIONS:
        fig, ax = plt.subplots(figsize=(6.0, 4.5))
        scatter = None
        for k, front in enumerate(fronts):
            obj = front.objective_array()
            scatter = ax.scatter(
                obj[:, xi], obj[:, yi], c=obj[:, ci], cmap="viridis",
                marker=markers[k % len(markers)], s=36, edgecolors="k", linewidths=0.3,
                label=f"seed {front.run_seed}")
        if scatter is not None:
            fig.colorbar(scatter, ax=ax, label=c_name)
        ax.set_xlabel(x_name)
        ax.set_ylabel(y_name)
        ax.set_title(f"Pareto front: {y_name} vs {x_name}")
        if len(fronts) > 1:
            ax.legend(fontsize=8)
        ax.grid(True, alpha=0.3)
        path = out_dir / f"{stem}_{x_name}_{y_name}.png"
        fig.tight_layout()
        fig.savefig(path, dpi=dpi)
        plt.close(fig)
        written.append(path)
    return written


def render_rank_chart(
    report: RankReport,
    out_dir: str | Path,
    stem: str = "ranks",
    dpi: int = 120,
) -> Path:
    """Average rank position per vulnerability (lower = mitigate first)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = list(report.average_ranks)
    values = [report.average_ranks[nid] for nid in ids]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * len(ids)), 4.0))
    bars = ax.bar(range(len(ids)), values, color="#3b6ea5")
    best = int(np.argmin(values))
    bars[best].set_color("#b03a2e")
    ax.set_xticks(range(len(ids)))
    ax.set_xticklabels(ids, rotation=45, ha="right", fontsize=8)
    ax.set_xlabel("Vulnerability nodes")
    ax.set_ylabel("Average rank position")
    ax.set_title(
        f"Average mitigation rank across {report.run_count} runs"
        + (f" of {report.trials_per_run} trials" if report.trials_per_run else ""))
    ax.grid(True, axis="y", alpha=0.3)
    path = out_dir / f"{stem}.png"
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return path
