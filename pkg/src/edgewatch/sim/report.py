"""Scenario reporting: metrics.csv, an aligned console table, and
rendered figures (bandwidth comparison and score timelines) alongside
the delimited output.
"""

from __future__ import annotations

import csv
import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .harness import Metrics, RunResult  # noqa: E402

CSV_COLUMNS = (
    "scenario",
    "duration_windows",
    "bytes_raw",
    "bytes_speed",
    "precision",
    "recall",
    "detection_latency_max",
    "orders_created",
    "retrain_cycles",
)


def write_csv(metrics: Sequence[Metrics], path: str) -> None:
    """One row per scenario, fixed column order (see CSV_COLUMNS)."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(CSV_COLUMNS))
        writer.writeheader()
        for m in metrics:
            writer.writerow(m.to_row())


def format_table(metrics: Sequence[Metrics]) -> str:
    rows = [[str(m.to_row()[c]) for c in CSV_COLUMNS] for m in metrics]
    headers = list(CSV_COLUMNS)
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    def line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths))
    out = [line(headers), line(["-" * w for w in widths])]
    out.extend(line(r) for r in rows)
    return "\n".join(out)


def check_bounds(metrics: Metrics, bounds: dict) -> list[tuple[str, bool, str]]:
    """Evaluate a scenario's configured assertions against its metrics."""
    checks = []
    if "max_speed_ratio" in bounds:
        limit = bounds["max_speed_ratio"]
        checks.append((
            f"bytes_speed/bytes_raw <= {limit}",
            metrics.speed_ratio <= limit,
            f"ratio={metrics.speed_ratio:.5f}",
        ))
    if "min_recall" in bounds:
        checks.append((
            f"recall >= {bounds['min_recall']}",
            metrics.recall >= bounds["min_recall"],
            f"recall={metrics.recall:.3f}",
        ))
    if "min_precision" in bounds:
        checks.append((
            f"precision >= {bounds['min_precision']}",
            metrics.precision >= bounds["min_precision"],
            f"precision={metrics.precision:.3f}",
        ))
    if "max_latency_windows" in bounds:
        lat = metrics.detection_latency_max
        ok = lat is not None and lat != "miss" and lat <= bounds["max_latency_windows"]
        checks.append((
            f"detection latency <= {bounds['max_latency_windows']} windows",
            ok,
            f"latency={lat}",
        ))
    if "max_orders" in bounds:
        checks.append((
            f"orders <= {bounds['max_orders']}",
            metrics.orders_created <= bounds["max_orders"],
            f"orders={metrics.orders_created}",
        ))
    return checks


def render_figures(results: Sequence[RunResult], out_dir: str) -> list[str]:
    """Bandwidth comparison (raw vs speed-layer bytes) plus one score
    timeline per scenario with fault spans and flagged windows in red."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    names = [r.metrics.scenario for r in results]
    raw = [r.metrics.bytes_raw for r in results]
    speed = [r.metrics.bytes_speed for r in results]
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    x = range(len(names))
    ax.bar([i - 0.18 for i in x], raw, width=0.36, label="unfiltered raw (spool)",
           color="#2a9d3f")
    ax.bar([i + 0.18 for i in x], [max(s, 1) for s in speed], width=0.36,
           label="speed layer (anomaly + rules)", color="#d62728")
    ax.set_yscale("log")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names)
    ax.set_ylabel("bytes on the wire (log)")
    ax.set_title("Network bandwidth: unfiltered vs anomaly-filtered")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = os.path.join(out_dir, "bandwidth.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    for r in results:
        trace = r.trace
        fig, ax = plt.subplots(figsize=(7.5, 3.2))
        ax.plot(trace["windows"], trace["scores"], lw=0.7, color="#444444",
                label="score")
        flagged_w = [w for w, a in zip(trace["windows"], trace["anomalies"]) if a]
        flagged_s = [s for s, a in zip(trace["scores"], trace["anomalies"]) if a]
        if flagged_w:
            ax.plot(flagged_w, flagged_s, "o", ms=3.5, color="#d62728",
                    label="alerted window")
        for f in r.scenario.faults:
            ax.axvspan(f.start_window, f.end_window, color="#d62728", alpha=0.12)
        for version, thr in sorted(trace["thresholds"].items()):
            ax.axhline(thr, ls="--", lw=0.8, alpha=0.6,
                       label=f"threshold v{version} ({thr:.2f})")
        ax.set_yscale("log")
        ax.set_xlabel("window")
        ax.set_ylabel("outlier score (log)")
        ax.set_title(f"scenario {r.metrics.scenario}")
        ax.legend(fontsize=7, loc="upper left")
        fig.tight_layout()
        path = os.path.join(out_dir, f"scores-{r.metrics.scenario}.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def report(results: Sequence[RunResult], out_dir: str, figures: bool = True) -> int:
    """Write metrics.csv (+ figures), print the table and the assertion
    verdicts; returns a process exit code (0 iff all assertions pass)."""
    os.makedirs(out_dir, exist_ok=True)
    metrics = [r.metrics for r in results]
    write_csv(metrics, os.path.join(out_dir, "metrics.csv"))
    if figures:
        render_figures(results, out_dir)
    print(format_table(metrics))
    exit_code = 0
    for r in results:
        for name, ok, detail in check_bounds(r.metrics, r.scenario.assert_bounds):
            print(f"[{'PASS' if ok else 'FAIL'}] {r.metrics.scenario}: {name} ({detail})")
            if not ok:
                exit_code = 1
    print(f"wrote {os.path.join(out_dir, 'metrics.csv')}")
    return exit_code
