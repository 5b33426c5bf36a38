"""Figure rendering for benchmark reports.

Renders wall-time and speedup charts from bench records next to the
delimited report so a run's numbers and pictures stay together.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .bench import BenchRecord


def _by_scenario(records: Sequence[BenchRecord]) -> dict[str, dict[str, BenchRecord]]:
    grouped: dict[str, dict[str, BenchRecord]] = {}
    for record in records:
        grouped.setdefault(record.scenario_id, {})[record.mode] = record
    return grouped


def render_report_figures(
    records: Sequence[BenchRecord], out_dir: str | Path, stem: str = "bench"
) -> list[Path]:
    """Write wall-time and speedup figures as PNG files; returns their paths.

    Produces <stem>_times.png (median wall time per scenario and mode) and
    <stem>_speedup.png (speedup with acceptance rate overlay). Scenarios
    missing a mode are skipped in the affected chart.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grouped = _by_scenario(records)
    ids = list(grouped)
    paths: list[Path] = []

    fig, ax = plt.subplots(figsize=(max(4.0, 1.6 * len(ids) + 2.0), 3.5))
    x = range(len(ids))
    width = 0.38
    auto = [grouped[i].get("autoregressive") for i in ids]
    spec = [grouped[i].get("speculative") for i in ids]
    ax.bar(
        [xi - width / 2 for xi in x],
        [r.wall_time_median if r else 0.0 for r in auto],
        width,
        label="autoregressive",
        color="#888888",
    )
    ax.bar(
        [xi + width / 2 for xi in x],
        [r.wall_time_median if r else 0.0 for r in spec],
        width,
        label="speculative",
        color="#2b7bba",
    )
    ax.set_xticks(list(x))
    ax.set_xticklabels(ids, rotation=20, ha="right")
    ax.set_ylabel("median wall time (s)")
    ax.set_title("Decode wall time by scenario")
    ax.legend()
    fig.tight_layout()
    times_path = out_dir / f"{stem}_times.png"
    fig.savefig(times_path, dpi=150)
    plt.close(fig)
    paths.append(times_path)

    fig, ax = plt.subplots(figsize=(max(4.0, 1.6 * len(ids) + 2.0), 3.5))
    speedups = [
        (s.speedup_vs_autoregressive if s and s.speedup_vs_autoregressive else 0.0)
        for s in spec
    ]
    ax.bar(list(x), speedups, 0.5, color="#2b7bba", label="speedup")
    ax.axhline(1.0, color="#888888", linewidth=1, linestyle="--")
    ax.set_xticks(list(x))
    ax.set_xticklabels(ids, rotation=20, ha="right")
    ax.set_ylabel("speedup vs autoregressive")
    ax.set_title("Speculative speedup by scenario")
    rates = [s.acceptance_rate if s else None for s in spec]
    if any(r is not None for r in rates):
        ax2 = ax.twinx()
        ax2.plot(
            [xi for xi, r in zip(x, rates) if r is not None],
            [r for r in rates if r is not None],
            "o-",
            color="#c2571a",
            label="acceptance rate",
        )
        ax2.set_ylim(0.0, 1.05)
        ax2.set_ylabel("acceptance rate")
    fig.tight_layout()
    speedup_path = out_dir / f"{stem}_speedup.png"
    fig.savefig(speedup_path, dpi=150)
    plt.close(fig)
    paths.append(speedup_path)
    return paths
