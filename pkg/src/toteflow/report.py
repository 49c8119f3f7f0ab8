"""Render bench results to figures alongside the delimited output."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .bench import emit
from .errors import ToteflowError


def _grouped_bars(ax, labels, series, ylabel, title):
    width = 0.8 / max(len(series), 1)
    for k, (name, values) in enumerate(sorted(series.items())):
        xs = [i + k * width for i in range(len(labels))]
        ax.bar(xs, values, width=width, label=name)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(labels))])
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=8)


def render_report(results: dict | str | Path, out_dir: str | Path) -> list[Path]:
    """Write summary figures (PNG) plus the CSV table into ``out_dir``."""
    if not isinstance(results, dict):
        results = json.loads(Path(results).read_text(encoding="utf-8"))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    csv_path = out / "results.csv"
    emit(results, "csv", csv_path)
    written.append(csv_path)

    aggs = results.get("aggregates", [])
    if not aggs:
        raise ToteflowError("no aggregate rows to render")
    instances = sorted({a["instance"] for a in aggs})
    policies = sorted({a["policy"] for a in aggs})
    by = {(a["instance"], a["policy"]): a for a in aggs}

    def series_for(field):
        return {
            p: [by.get((i, p), {}).get(field, 0.0) or 0.0 for i in instances]
            for p in policies
        }

    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    _grouped_bars(axes[0], instances, series_for("mean_z_final"),
                  "mean z_final", "Tote movements by policy")
    _grouped_bars(axes[1], instances, series_for("mean_runtime_s"),
                  "mean runtime (s)", "Wall-clock runtime by policy")
    fig.tight_layout()
    fig_path = out / "summary.png"
    fig.savefig(fig_path, dpi=130)
    plt.close(fig)
    written.append(fig_path)

    if any(a.get("average_gap_pct") is not None for a in aggs):
        fig, ax = plt.subplots(figsize=(6.5, 4))
        _grouped_bars(ax, instances, series_for("average_gap_pct"),
                      "average gap (%)",
                      f"Gap vs {results['metadata']['baseline_policy']}")
        fig.tight_layout()
        gap_path = out / "gaps.png"
        fig.savefig(gap_path, dpi=130)
        plt.close(fig)
        written.append(gap_path)
    return written
