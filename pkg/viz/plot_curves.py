#!/usr/bin/env python3
"""Plot training curves from one or more run logs.

Usage:
    plot_curves.py --csv runs/a/train_log.csv,runs/b/train_log.csv \
                   --metric quest_completion --out fig.png

Each CSV must carry the columns step,game_id,avg_reward,quest_completion,
epsilon,loss; one line is drawn per (file, game_id) pair.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

EXPECTED_COLUMNS = ["step", "game_id", "avg_reward", "quest_completion", "epsilon", "loss"]
METRICS = ("avg_reward", "quest_completion")


def read_log(path: str) -> dict[str, tuple[list[int], dict[str, list[float]]]]:
    """game_id -> (steps, column -> values)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV") from None
        if header != EXPECTED_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {header}; expected {EXPECTED_COLUMNS}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    series: dict[str, tuple[list[int], dict[str, list[float]]]] = {}
    for row in rows:
        step, game_id = int(row[0]), row[1]
        steps, cols = series.setdefault(game_id, ([], {m: [] for m in METRICS}))
        steps.append(step)
        cols["avg_reward"].append(float(row[2]))
        cols["quest_completion"].append(float(row[3]))
    return series


def plot_curves(csv_paths: list[str], metric: str, out_image: str) -> None:
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for path in csv_paths:
        series = read_log(path)
        label_prefix = Path(path).parent.name or Path(path).stem
        for game_id, (steps, cols) in series.items():
            suffix = f" {game_id}" if len(series) > 1 else f" {game_id}"
            ax.plot(steps, cols[metric], label=f"{label_prefix}{suffix}")
    ax.set_xlabel("environment steps")
    ax.set_ylabel(metric.replace("_", " "))
    if metric == "quest_completion":
        ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_image, dpi=120)
    plt.close(fig)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--csv", required=True, help="comma-separated run log CSVs")
    parser.add_argument("--metric", default="quest_completion", choices=METRICS)
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    try:
        plot_curves(args.csv.split(","), args.metric, args.out)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
