"""Policy distillation: teacher data stores, the multi-headed student, and the
multi-task Q-learning baseline.

Teachers roll their own game near-greedily and record full Q-vectors per
visited state into per-game stores. The student shares one trunk over the
union vocabulary and keeps one controller head pair per game; it minimizes,
per head, the KL divergence between the temperature-softened teacher softmax
and its own softmax. The baseline trains the same multi-headed architecture
with plain TD learning, switching games every episode.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import agent as agent_mod
from . import env as env_mod
from . import nn
from .agent import HyperParams, LstmDqnNet, TrainResult, LogRow
from .env import Command, GameSpec
from .seeding import substream

STORE_MAGIC = b"TGDS"
STORE_VERSION = 1


@dataclass
class DistillSample:
    state_tokens: np.ndarray
    q_action: np.ndarray
    q_object: np.ndarray
    game_id: str


class UnionVocab:
    """Merged vocabulary over several games, ids in first-seen merge order.

    First-seen (rather than sorted) merging keeps a single-game union equal to
    that game's own vocabulary, so one-game multi-task nets degenerate exactly
    to the corresponding teacher net.
    """

    def __init__(self, specs: list[GameSpec]):
        self.words: list[str] = []
        self.index: dict[str, int] = {}
        self.masks: dict[str, np.ndarray] = {}
        for spec in specs:
            for word in spec.vocab.words:
                if word not in self.index:
                    self.index[word] = len(self.words)
                    self.words.append(word)
        size = len(self.words)
        for spec in specs:
            mask = np.zeros(size, dtype=bool)
            for word in spec.vocab.words:
                mask[self.index[word]] = True
            self.masks[spec.game_id] = mask

    def __len__(self) -> int:
        return len(self.words)

    def remap(self, tokens: np.ndarray, source_words: list[str]) -> np.ndarray:
        return np.array([self.index[source_words[t]] for t in tokens], dtype=np.int64)


def generate_teacher_data(teacher: LstmDqnNet, spec: GameSpec, n_samples: int,
                          epsilon_gen: float = 0.05, seed: int = 0) -> list[DistillSample]:
    """Roll the teacher near-greedily, recording (tokens, full Q-vectors) per state."""
    env_rng = substream(seed, "gen/env")
    explore_rng = substream(seed, "gen/explore")
    samples: list[DistillSample] = []
    while len(samples) < n_samples:
        state, obs = env_mod.reset(spec, rng=env_rng)
        done = False
        while not done and len(samples) < n_samples:
            tokens = teacher.encode(obs.text)
            qa, qo = agent_mod.forward_q(teacher, tokens, spec.game_id)
            samples.append(DistillSample(tokens, qa.values.copy(), qo.values.copy(), spec.game_id))
            ai, oi = agent_mod.select_command(qa.values, qo.values, epsilon_gen, explore_rng)
            cmd = Command(spec.action_words[ai], spec.object_words[oi])
            state, result = env_mod.step(state, spec, cmd)
            obs = result.observation
            done = result.done
    return samples


def save_store(path: str | Path, samples: list[DistillSample], game_id: str,
               n_actions: int, n_objects: int) -> None:
    chunks = [STORE_MAGIC, struct.pack("<I", STORE_VERSION)]
    encoded = game_id.encode("utf-8")
    chunks.append(struct.pack("<I", len(encoded)))
    chunks.append(encoded)
    chunks.append(struct.pack("<III", n_actions, n_objects, len(samples)))
    for s in samples:
        if len(s.q_action) != n_actions or len(s.q_object) != n_objects:
            raise ValueError(f"sample head sizes do not match store header for {game_id}")
        chunks.append(struct.pack("<I", len(s.state_tokens)))
        chunks.append(np.asarray(s.state_tokens, dtype="<u4").tobytes())
        chunks.append(np.asarray(s.q_action, dtype="<f4").tobytes())
        chunks.append(np.asarray(s.q_object, dtype="<f4").tobytes())
    tmp = Path(path).with_suffix(Path(path).suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_store(path: str | Path) -> tuple[str, int, int, list[DistillSample]]:
    """Read a store file; token ids stay in the source game's vocabulary."""
    data = Path(path).read_bytes()
    pos = 0

    def take(count: int) -> bytes:
        nonlocal pos
        if pos + count > len(data):
            raise ValueError(f"truncated teacher store {path}")
        out = data[pos:pos + count]
        pos += count
        return out

    if take(4) != STORE_MAGIC:
        raise ValueError(f"bad magic bytes in teacher store {path}")
    version = struct.unpack("<I", take(4))[0]
    if version != STORE_VERSION:
        raise ValueError(f"unsupported store version {version}")
    game_id = take(struct.unpack("<I", take(4))[0]).decode("utf-8")
    n_actions, n_objects, count = struct.unpack("<III", take(12))
    samples = []
    for _ in range(count):
        n_tokens = struct.unpack("<I", take(4))[0]
        tokens = np.frombuffer(take(4 * n_tokens), dtype="<u4").astype(np.int64)
        q_action = np.frombuffer(take(4 * n_actions), dtype="<f4").copy()
        q_object = np.frombuffer(take(4 * n_objects), dtype="<f4").copy()
        samples.append(DistillSample(tokens, q_action, q_object, game_id))
    if pos != len(data):
        raise ValueError(f"trailing bytes in teacher store {path}")
    return game_id, n_actions, n_objects, samples


class TeacherStore:
    """Per-game distillation datasets, token ids in the student's union vocabulary."""

    def __init__(self):
        self.samples: dict[str, list[DistillSample]] = {}

    def add_game(self, game_id: str, samples: list[DistillSample]) -> None:
        self.samples[game_id] = list(samples)

    def game_ids(self) -> list[str]:
        return list(self.samples)

    @staticmethod
    def from_generated(per_game: dict[str, list[DistillSample]],
                       specs: list[GameSpec], union: UnionVocab) -> "TeacherStore":
        store = TeacherStore()
        by_id = {s.game_id: s for s in specs}
        for game_id, samples in per_game.items():
            words = by_id[game_id].vocab.words
            store.add_game(game_id, [
                DistillSample(union.remap(s.state_tokens, words), s.q_action, s.q_object, game_id)
                for s in samples
            ])
        return store


def build_student(specs: list[GameSpec], hp: HyperParams, seed: int,
                  dtype=nn.DEFAULT_DTYPE) -> tuple[LstmDqnNet, UnionVocab]:
    """Student (or multi-task baseline) net: shared trunk, one head pair per game."""
    union = UnionVocab(specs)
    sizes = {s.game_id: (len(s.action_words), len(s.object_words)) for s in specs}
    return agent_mod.build_net(union.words, sizes, hp, seed, dtype), union


def student_forward(student: LstmDqnNet, token_ids, game_id: str,
                    tape: nn.Tape | None = None) -> tuple[nn.Tensor, nn.Tensor]:
    """Shared trunk, then the controller pair selected by game label."""
    return agent_mod.forward_q(student, token_ids, game_id, tape)


def distill_loss(tape: nn.Tape | None, sample: DistillSample,
                 student_q_action: nn.Tensor, student_q_object: nn.Tensor,
                 tau: float) -> nn.Tensor:
    """KL per head against the temperature-softened teacher softmax, summed."""
    p_action = nn.softmax(sample.q_action, tau)
    p_object = nn.softmax(sample.q_object, tau)
    kl_a = nn.kl_loss(tape, p_action, student_q_action)
    kl_o = nn.kl_loss(tape, p_object, student_q_object)
    return nn.total(tape, [kl_a, kl_o])


def train_student(store: TeacherStore, student: LstmDqnNet, specs: list[GameSpec],
                  hp: HyperParams, seed: int, epochs: int,
                  block_minibatches: int = 25) -> TrainResult:
    """Round-robin distillation: per turn, one block of minibatches per game.

    An epoch visits enough blocks that the largest store is sampled about
    once. Evaluation on every game is appended to the log after each epoch.
    """
    game_ids = student.game_ids()
    for gid in game_ids:
        if not store.samples.get(gid):
            raise ValueError(f"empty teacher store for game {gid!r}")
    specs_by_id = {s.game_id: s for s in specs}

    draw_rng = substream(seed, "distill")
    eval_rng = substream(seed, "distill/eval")
    log: list[LogRow] = []
    minibatches = 0
    largest = max(len(store.samples[g]) for g in game_ids)
    blocks_per_epoch = max(1, int(np.ceil(largest / (hp.batch_size * block_minibatches))))

    last_loss = 0.0
    for _ in range(epochs):
        for _ in range(blocks_per_epoch):
            for gid in game_ids:
                samples = store.samples[gid]
                for _ in range(block_minibatches):
                    idx = draw_rng.integers(len(samples), size=hp.batch_size)
                    tape = nn.Tape()
                    losses = []
                    for i in idx:
                        s = samples[i]
                        qa, qo = student_forward(student, s.state_tokens, gid, tape)
                        losses.append(distill_loss(tape, s, qa, qo, hp.tau))
                    loss = nn.scale(tape, nn.total(tape, losses), 1.0 / hp.batch_size)
                    tape.backward(loss)
                    nn.sgd_update(student.parameters(), hp.lr, hp.clip_norm)
                    last_loss = float(loss.values)
                    minibatches += 1
        for gid in game_ids:
            eval_seed = int(eval_rng.integers(2 ** 63))
            avg_reward, completion = agent_mod.evaluate(
                student, specs_by_id[gid], hp.eval_episodes, eval_seed,
                epsilon=hp.eval_epsilon, episode_cap=hp.episode_cap, game_id=gid)
            log.append(LogRow(minibatches, gid, avg_reward, completion, 0.0, last_loss))
    return TrainResult(student, log)


def train_multitask_lstm_dqn(specs: list[GameSpec], hp: HyperParams, seed: int,
                             budget_steps: int) -> TrainResult:
    """TD baseline on the shared-trunk multi-head net, game switched every episode."""
    if not specs:
        raise ValueError("at least one game required")
    net, _ = build_student(specs, hp, seed)
    return agent_mod.train_q_loop(specs, net, hp, seed, budget_steps)
