#!/usr/bin/env python3
"""Project exported word vectors to 2-D with t-SNE, one panel per game.

Usage:
    plot_tsne.py --csv embeddings.csv --perplexity 12 --seed 0 --out tsne.png

The CSV comes from the embedding export: word,game_id,h_1..h_H.
"""

from __future__ import annotations

import argparse
import csv
import sys

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from sklearn.manifold import TSNE

MIN_WORDS = 10


def read_embeddings(path: str) -> dict[str, tuple[list[str], np.ndarray]]:
    """game_id -> (words, vector matrix)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["word", "game_id"]:
            raise ValueError(f"{path}: expected word,game_id,h_1.. header")
        per_game: dict[str, tuple[list[str], list[list[float]]]] = {}
        for row in reader:
            words, vecs = per_game.setdefault(row[1], ([], []))
            words.append(row[0])
            vecs.append([float(v) for v in row[2:]])
    if not per_game:
        raise ValueError(f"{path}: no embedding rows")
    return {g: (w, np.asarray(v)) for g, (w, v) in per_game.items()}


def tsne_layout(vectors: np.ndarray, perplexity: float, seed: int,
                iterations: int = 1000) -> np.ndarray:
    if len(vectors) < MIN_WORDS:
        raise ValueError(f"need at least {MIN_WORDS} words, got {len(vectors)}")
    perplexity = min(perplexity, (len(vectors) - 1) / 3)
    # exact gradients: cheap at vocabulary scale and keep duplicates coincident
    model = TSNE(n_components=2, perplexity=perplexity, random_state=seed,
                 max_iter=iterations, init="pca", method="exact")
    return model.fit_transform(vectors)


def plot_tsne(csv_path: str, perplexity: float, seed: int, out_image: str,
              iterations: int = 1000) -> None:
    per_game = read_embeddings(csv_path)
    games = sorted(per_game)
    fig, axes = plt.subplots(1, len(games), figsize=(5.5 * len(games), 5), squeeze=False)
    for ax, game_id in zip(axes[0], games):
        words, vectors = per_game[game_id]
        coords = tsne_layout(vectors, perplexity, seed, iterations)
        ax.scatter(coords[:, 0], coords[:, 1], s=12, alpha=0.7)
        for word, (x, y) in zip(words, coords):
            ax.annotate(word, (x, y), fontsize=6, alpha=0.8)
        ax.set_title(game_id)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(out_image, dpi=120)
    plt.close(fig)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--csv", required=True)
    parser.add_argument("--perplexity", type=float, default=12.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--iterations", type=int, default=1000)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        plot_tsne(args.csv, args.perplexity, args.seed, args.out, args.iterations)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
