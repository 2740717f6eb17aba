"""Interpretability toolkit: mean-jacobian heat maps between layer pairs,
word-embedding export through the LSTM, and embedding-transfer initialization.

All operations are read-only over the model; jacobians are computed by
per-output-component reverse sweeps on a fresh tape per state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import agent as agent_mod
from . import env as env_mod
from . import nn
from .agent import LstmDqnNet
from .env import Command, GameSpec
from .seeding import substream

LAYER_PAIRS = (
    ("mean_pool", "relu"),
    ("relu", "action_head"),
    ("relu", "object_head"),
)


@dataclass(frozen=True)
class LayerPair:
    """One of the three analyzed combinations, downstream w.r.t. upstream."""

    upstream: str
    downstream: str

    def __post_init__(self):
        if (self.upstream, self.downstream) not in LAYER_PAIRS:
            raise ValueError(
                f"unsupported layer pair {self.upstream} -> {self.downstream}; "
                f"allowed: {LAYER_PAIRS}")


@dataclass
class HeatMap:
    raw: np.ndarray
    scaled: np.ndarray  # uint8, 0..255


def sample_states(net: LstmDqnNet, spec: GameSpec, count: int = 100,
                  epsilon: float = 0.05, seed: int = 0) -> list[np.ndarray]:
    """Token sequences visited by rolling `net` near-greedily in its game."""
    env_rng = substream(seed, "analysis/env")
    explore_rng = substream(seed, "analysis/explore")
    states: list[np.ndarray] = []
    while len(states) < count:
        state, obs = env_mod.reset(spec, rng=env_rng)
        done = False
        while not done and len(states) < count:
            tokens = net.encode(obs.text)
            states.append(tokens)
            qa, qo = agent_mod.forward_q(net, tokens, spec.game_id)
            ai, oi = agent_mod.select_command(qa.values, qo.values, epsilon, explore_rng)
            state, result = env_mod.step(
                state, spec, Command(spec.action_words[ai], spec.object_words[oi]))
            obs = result.observation
            done = result.done
    return states


def _pair_tensors(trace: agent_mod.Trace, pair: LayerPair):
    upstream = {"mean_pool": trace.mean_pool, "relu": trace.relu}[pair.upstream]
    downstream = {
        "relu": trace.relu,
        "action_head": trace.q_action,
        "object_head": trace.q_object,
    }[pair.downstream]
    return upstream, downstream


def mean_jacobian(net: LstmDqnNet, game_id: str, states: list[np.ndarray],
                  pair: LayerPair) -> np.ndarray:
    """Elementwise mean over states of d(downstream)/d(upstream).

    Each jacobian row comes from one reverse sweep seeded at that output
    component; parameters are never touched.
    """
    if not states:
        raise ValueError("at least one state required")
    acc = None
    for tokens in states:
        tape = nn.Tape()
        trace = agent_mod.forward_trace(net, tokens, game_id, tape=tape)
        upstream, downstream = _pair_tensors(trace, pair)
        out_dim = downstream.values.shape[0]
        jac = np.empty((out_dim, upstream.values.shape[0]), dtype=np.float64)
        seed_vec = np.zeros(out_dim, dtype=downstream.values.dtype)
        for k in range(out_dim):
            seed_vec[k] = 1.0
            jac[k] = tape.gradients(downstream, seed_vec, [upstream])[0]
            seed_vec[k] = 0.0
        acc = jac if acc is None else acc + jac
    return acc / len(states)


def to_heatmap(raw: np.ndarray) -> HeatMap:
    """Scale absolute values to the 0..255 byte range."""
    raw = np.asarray(raw, dtype=np.float64)
    peak = np.abs(raw).max()
    if peak == 0:
        raise ValueError("all-zero matrix cannot be scaled to a heat map")
    scaled = np.rint(255.0 * np.abs(raw) / peak).astype(np.uint8)
    return HeatMap(raw=raw, scaled=scaled)


def heatmap_mean_abs_diff(a: HeatMap, b: HeatMap) -> float:
    """Mean |a - b| over the scaled byte maps."""
    if a.scaled.shape != b.scaled.shape:
        raise ValueError(f"heat map shapes differ: {a.scaled.shape} vs {b.scaled.shape}")
    return float(np.abs(a.scaled.astype(np.int16) - b.scaled.astype(np.int16)).mean())


def write_heatmap_pgm(hm: HeatMap, path: str | Path) -> None:
    """8-bit grayscale PGM (binary P5)."""
    rows, cols = hm.scaled.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(hm.scaled.tobytes())


def write_heatmap_csv(hm: HeatMap, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in hm.scaled:
            writer.writerow([int(v) for v in row])


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path} is not a binary PGM file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    cols, rows, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValueError("only 8-bit PGM supported")
    pos += 1
    pixels = np.frombuffer(data[pos:pos + rows * cols], dtype=np.uint8)
    if pixels.size != rows * cols:
        raise ValueError(f"truncated PGM payload in {path}")
    return pixels.reshape(rows, cols).copy()


def word_output_vector(net: LstmDqnNet, word: str) -> np.ndarray:
    """One LSTM step from the zero state over the single-token sequence."""
    idx = net.vocab_index[word]
    x = nn.Tensor(net.embedding.values[idx])
    hidden = net.hidden_size
    h = nn.Tensor(np.zeros(hidden, dtype=net.dtype))
    c = nn.Tensor(np.zeros(hidden, dtype=net.dtype))
    h2, _ = nn.lstm_step(None, net.lstm, x, h, c)
    return h2.values


def export_word_embeddings(net: LstmDqnNet, specs: list[GameSpec],
                           out_path: str | Path) -> int:
    """CSV rows `word,game_id,h_1..h_H` for every word of every given game."""
    hidden = net.hidden_size
    rows = 0
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["word", "game_id"] + [f"h_{i + 1}" for i in range(hidden)])
        for spec in specs:
            for word in spec.vocab.words:
                vec = word_output_vector(net, word)
                writer.writerow([word, spec.game_id] + [f"{v:.6f}" for v in vec])
                rows += 1
    return rows


@dataclass
class TransferPlan:
    """How to initialize a new agent's embeddings from previous models.

    mode: "single" (one source: agents A1..A4), "random" (no source, rows
    frozen: A5), or "union_random" (all sources, per-word random source
    choice: A6).
    """

    mode: str
    sources: list[tuple[str, list[str], np.ndarray]]  # (label, words, embedding matrix)
    freeze: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("single", "random", "union_random"):
            raise ValueError(f"unknown transfer mode {self.mode!r}")
        if self.mode == "single" and len(self.sources) != 1:
            raise ValueError("single-source transfer needs exactly one source")
        if self.mode == "random" and self.sources:
            raise ValueError("random transfer takes no sources")
        if self.mode == "union_random" and len(self.sources) < 2:
            raise ValueError("union transfer needs at least two sources")


def transfer_initialize(plan: TransferPlan, target_net: LstmDqnNet) -> dict:
    """Copy embedding rows for overlapping words into `target_net`.

    Copied rows (all rows for mode "random") are pinned when plan.freeze is
    set. Returns a report mapping source label -> copied words.
    """
    emb = target_net.embedding
    copied: dict[str, list[str]] = {label: [] for label, _, _ in plan.sources}
    frozen_mask = np.zeros(emb.values.shape[0], dtype=bool)

    if plan.mode == "random":
        frozen_mask[:] = True
    else:
        by_word: dict[str, list[tuple[str, np.ndarray]]] = {}
        for label, words, matrix in plan.sources:
            if matrix.shape[1] != emb.values.shape[1]:
                raise ValueError(
                    f"embedding width mismatch: source {label} has {matrix.shape[1]}, "
                    f"target has {emb.values.shape[1]}")
            for row, word in enumerate(words):
                if word in target_net.vocab_index:
                    by_word.setdefault(word, []).append((label, matrix[row]))
        pick_rng = substream(plan.seed, "transfer/source-choice")
        for word in target_net.vocab_words:  # deterministic order
            candidates = by_word.get(word)
            if not candidates:
                continue
            label, vector = candidates[int(pick_rng.integers(len(candidates)))] \
                if len(candidates) > 1 else candidates[0]
            idx = target_net.vocab_index[word]
            emb.values[idx] = vector.astype(emb.values.dtype)
            frozen_mask[idx] = True
            copied[label].append(word)

    if plan.freeze and frozen_mask.any():
        emb.frozen_rows = frozen_mask
    return {
        "mode": plan.mode,
        "freeze": plan.freeze,
        "copied": copied,
        "frozen_row_count": int(frozen_mask.sum()),
    }
