"""Latency-breakdown and ratio figures rendered next to the CSV output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

BASELINE_STACK = ("vscc", "statedb_read", "mvcc", "ledger_write", "statedb_write", "others")
OPTIMIZED_STACK = ("vscc_statedb_read", "mvcc", "ledger_statedb_write", "others")

COLORS = {
    "vscc": "#4c72b0", "statedb_read": "#dd8452", "mvcc": "#55a868",
    "ledger_write": "#c44e52", "statedb_write": "#8172b3", "others": "#937860",
    "vscc_statedb_read": "#da8bc3", "ledger_statedb_write": "#8c8c8c",
}


def _label(cell) -> str:
    return f"{cell['workers']}w/{cell['block_size']}"


def plot_summary(summary, stem) -> list:
    """Stacked per-stage latency bars with throughput on a second axis."""
    if not summary:
        return []
    stem = Path(stem)
    stack = BASELINE_STACK if summary[0]["mode"] == "baseline" else OPTIMIZED_STACK
    labels = [_label(c) for c in summary]
    x = range(len(summary))

    fig, ax = plt.subplots(figsize=(max(4.5, 1.1 * len(summary) + 2), 4.2))
    bottom = [0.0] * len(summary)
    for comp in stack:
        ms = [c[f"{comp}_us_mean"] / 1000 for c in summary]
        ax.bar(x, ms, 0.6, bottom=bottom, label=comp, color=COLORS[comp])
        bottom = [b + m for b, m in zip(bottom, ms)]
    ax.set_ylabel("block validation latency (ms)")
    ax.set_xlabel("vscc workers / block size")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels)
    ax.set_title(f"{summary[0]['mode']} / {summary[0]['backend']}")

    ax2 = ax.twinx()
    ax2.plot(list(x), [c["throughput_mean"] for c in summary], "k-o", ms=4, label="throughput")
    ax2.set_ylabel("throughput (tx/s)")
    ax2.set_ylim(0, 1.15 * max(c["throughput_mean"] for c in summary) or 1.0)

    h1, l1 = ax.get_legend_handles_labels()
    h2, l2 = ax2.get_legend_handles_labels()
    fig.legend(h1 + h2, l1 + l2, fontsize=7, loc="lower center", ncol=4, frameon=False)
    fig.tight_layout(rect=(0, 0.14, 1, 1))
    path = stem.with_name(stem.name + "_breakdown.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def plot_compare(rows, path) -> Path:
    path = Path(path)
    comps = ("throughput", "vscc", "statedb_read", "mvcc", "total")
    fig, ax = plt.subplots(figsize=(6, 3.4))
    width = 0.8 / max(1, len(rows))
    for i, r in enumerate(rows):
        vals = [r[f"{c}_ratio"] for c in comps]
        vals = [v if v != float("inf") else 0.0 for v in vals]
        ax.bar([j + i * width for j in range(len(comps))], vals, width,
               label=f"{r['workers']}w/{r['block_size']}")
    ax.axhline(1.0, color="k", lw=0.8)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(comps))])
    ax.set_xticklabels(comps)
    ax.set_ylabel("B vs A (>1 is better)")
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
