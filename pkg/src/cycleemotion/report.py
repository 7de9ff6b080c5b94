"""Loss-curve figures and metric comparison tables."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# bookkeeping fields of a loss-log record that are not losses
_NOT_LOSSES = {"part", "epoch", "step", "event", "best", "F_updated", "metric"}

METRIC_ORDER = ("kl", "skl", "ssd", "bc", "canberra", "chebyshev", "cosine", "average_accuracy", "num_samples")
MISSING = "n/a"


def read_loss_log(path: "str | Path") -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"loss log not found: {path}")
    with open(path) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not any("event" not in r for r in records):
        raise ValueError(f"loss log {path} has no step records")
    return records


def loss_series(records: Iterable[dict]) -> dict[str, list[tuple[int, float]]]:
    """Per-loss (step, value) pairs from the step records of a log."""
    series = defaultdict(list)
    for rec in records:
        if "event" in rec:
            continue
        for key, value in rec.items():
            if key in _NOT_LOSSES or isinstance(value, bool) or not isinstance(value, (int, float)):
                continue
            series[key].append((rec.get("step", len(series[key])), float(value)))
    return dict(series)


def plot_loss_curves(records: list[dict], out_dir: "str | Path", fmt: str = "png") -> list[Path]:
    """Write one figure per logged quantity; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, points in sorted(loss_series(records).items()):
        steps, values = zip(*points)
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(steps, values, lw=0.8)
        ax.set_xlabel("step")
        ax.set_ylabel(name)
        ax.set_title(name)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"loss_{name}.{fmt}"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def _scalar_metrics(metrics: dict) -> dict:
    return {k: v for k, v in metrics.items() if v is None or isinstance(v, (int, float))}


def comparison_table(runs: dict[str, dict], columns: Optional[list[str]] = None) -> tuple[list[str], list[list[str]]]:
    """Header and rows (one per run label); absent or null cells are ``n/a``."""
    if not runs:
        raise ValueError("no metric files to compare")
    if columns is None:
        present = set()
        for m in runs.values():
            present.update(_scalar_metrics(m))
        columns = [k for k in METRIC_ORDER if k in present] + sorted(present - set(METRIC_ORDER))
    rows = []
    for label, m in runs.items():
        row = [label]
        for col in columns:
            v = m.get(col)
            if v is None or (isinstance(v, float) and math.isnan(v)):
                row.append(MISSING)
            elif isinstance(v, int):
                row.append(str(v))
            else:
                row.append(f"{v:.4f}")
        rows.append(row)
    return ["run"] + list(columns), rows


def write_csv(header, rows, path: "str | Path") -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_markdown(header, rows, path: "str | Path") -> Path:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path
