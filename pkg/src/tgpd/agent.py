"""LSTM-DQN agents for Home World games.

A net owns a vocabulary, an embedding -> LSTM -> mean-pool -> linear/ReLU
trunk, and one (action, object) head pair per game it plays. Single-game
teachers have exactly one pair; the multi-task variants add one pair per game
and select it by game label. The training loop is shared: epsilon-greedy
acting into per-game replay buffers, TD targets from a periodically synced
frozen copy, one SGD step per environment step once the warmup is filled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import env as env_mod
from . import nn
from .env import Command, GameSpec
from .seeding import substream


@dataclass
class HyperParams:
    gamma: float = 0.5
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    anneal_steps: int | None = None  # None: first third of the training budget
    tau: float = 0.01
    lr: float = 0.2
    clip_norm: float = 5.0
    target_sync: float = 500  # train steps between target syncs; inf/None: never
    batch_size: int = 32
    d_emb: int = 20
    hidden: int = 32
    d1: int = 100
    episode_cap: int = 20
    replay_capacity: int = 20_000
    warmup: int = 500
    eval_interval: int = 500
    eval_episodes: int = 32
    eval_epsilon: float = 0.05

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        for name in ("epsilon_start", "epsilon_end", "eval_epsilon"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        for name in ("tau", "lr", "clip_norm", "batch_size", "d_emb", "hidden",
                     "d1", "episode_cap", "replay_capacity"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")

    def override(self, **kwargs) -> "HyperParams":
        return replace(self, **kwargs)


@dataclass
class Heads:
    w_act: nn.Parameter
    b_act: nn.Parameter
    w_obj: nn.Parameter
    b_obj: nn.Parameter

    def parameters(self) -> list:
        return [self.w_act, self.b_act, self.w_obj, self.b_obj]


class LstmDqnNet:
    """Recurrent Q-network with per-game controller heads."""

    def __init__(self, vocab_words, embedding, lstm, w1, b1, heads):
        self.vocab_words = list(vocab_words)
        self.vocab_index = {w: i for i, w in enumerate(self.vocab_words)}
        self.embedding = embedding
        self.lstm = lstm
        self.w1 = w1
        self.b1 = b1
        self.heads: dict[str, Heads] = heads

    @property
    def dtype(self):
        return self.embedding.values.dtype

    @property
    def hidden_size(self) -> int:
        return self.lstm.hidden_size

    def game_ids(self) -> list[str]:
        return list(self.heads)

    def single_game_id(self) -> str:
        if len(self.heads) != 1:
            raise ValueError("net has multiple controller heads; pass game_id explicitly")
        return next(iter(self.heads))

    def trunk_parameters(self) -> list:
        return [self.embedding, self.lstm.w_x, self.lstm.w_h, self.lstm.bias, self.w1, self.b1]

    def parameters(self) -> list:
        params = self.trunk_parameters()
        for heads in self.heads.values():
            params.extend(heads.parameters())
        return params

    def encode(self, text: str) -> np.ndarray:
        return np.array([self.vocab_index[w] for w in env_mod.tokenize(text)], dtype=np.int64)

    def copy(self) -> "LstmDqnNet":
        return LstmDqnNet(
            self.vocab_words,
            self.embedding.copy(),
            nn.LstmParams(self.lstm.w_x.copy(), self.lstm.w_h.copy(), self.lstm.bias.copy()),
            self.w1.copy(),
            self.b1.copy(),
            {gid: Heads(*(p.copy() for p in h.parameters())) for gid, h in self.heads.items()},
        )


def _uniform(rng, lo, hi, shape, dtype):
    return rng.uniform(lo, hi, size=shape).astype(dtype)


def build_net(
    vocab_words: list[str],
    head_sizes: dict[str, tuple[int, int]],
    hp: HyperParams,
    seed: int,
    dtype=nn.DEFAULT_DTYPE,
) -> LstmDqnNet:
    """Initialize a net over `vocab_words` with one head pair per game.

    Weight draws come from named substreams of `seed`, so nets that share
    layer shapes and game ids are initialized identically regardless of how
    many games they serve.
    """
    vocab_size = len(vocab_words)
    emb_rng = substream(seed, "init/embedding")
    embedding = nn.Parameter(
        _uniform(emb_rng, -0.5, 0.5, (vocab_size, hp.d_emb), dtype), name="embedding")

    k = 1.0 / math.sqrt(hp.hidden)
    kx = 1.0 / math.sqrt(hp.d_emb)  # keeps gate pre-activations in the responsive range
    lstm_rng = substream(seed, "init/lstm")
    bias = np.zeros(4 * hp.hidden, dtype=dtype)
    bias[hp.hidden:2 * hp.hidden] = 1.0  # open forget gates early in training
    lstm = nn.LstmParams(
        w_x=nn.Parameter(_uniform(lstm_rng, -kx, kx, (hp.d_emb, 4 * hp.hidden), dtype), name="lstm.w_x"),
        w_h=nn.Parameter(_uniform(lstm_rng, -k, k, (hp.hidden, 4 * hp.hidden), dtype), name="lstm.w_h"),
        bias=nn.Parameter(bias, name="lstm.bias"),
    )

    lin_rng = substream(seed, "init/linear1")
    k1 = math.sqrt(6.0 / hp.hidden)  # He-style gain into the ReLU layer
    w1 = nn.Parameter(_uniform(lin_rng, -k1, k1, (hp.hidden, hp.d1), dtype), name="linear1.w")
    b1 = nn.Parameter(np.zeros(hp.d1, dtype=dtype), name="linear1.b")

    kd = 1.0 / math.sqrt(hp.d1)
    heads = {}
    for game_id, (n_actions, n_objects) in head_sizes.items():
        head_rng = substream(seed, f"init/head/{game_id}")
        heads[game_id] = Heads(
            w_act=nn.Parameter(_uniform(head_rng, -kd, kd, (hp.d1, n_actions), dtype),
                               name=f"head.{game_id}.action.w"),
            b_act=nn.Parameter(np.zeros(n_actions, dtype=dtype), name=f"head.{game_id}.action.b"),
            w_obj=nn.Parameter(_uniform(head_rng, -kd, kd, (hp.d1, n_objects), dtype),
                               name=f"head.{game_id}.object.w"),
            b_obj=nn.Parameter(np.zeros(n_objects, dtype=dtype), name=f"head.{game_id}.object.b"),
        )
    return LstmDqnNet(vocab_words, embedding, lstm, w1, b1, heads)


def build_teacher_net(spec: GameSpec, hp: HyperParams, seed: int, dtype=nn.DEFAULT_DTYPE) -> LstmDqnNet:
    sizes = {spec.game_id: (len(spec.action_words), len(spec.object_words))}
    return build_net(spec.vocab.words, sizes, hp, seed, dtype)


@dataclass(frozen=True)
class Trace:
    """Intermediate activations of one forward pass, for jacobian analyses."""

    mean_pool: nn.Tensor
    relu: nn.Tensor
    q_action: nn.Tensor
    q_object: nn.Tensor
    tape: nn.Tape | None


def forward_trace(net: LstmDqnNet, token_ids, game_id: str | None = None,
                  tape: nn.Tape | None = None) -> Trace:
    """Full forward pass keeping the mean-pool and ReLU activations."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("empty observation: at least one token required")
    if game_id is None:
        game_id = net.single_game_id()
    heads = net.heads.get(game_id)
    if heads is None:
        raise KeyError(f"unknown game_id {game_id!r}; net serves {net.game_ids()}")

    xs = nn.embedding_sequence(tape, net.embedding, ids)
    hs = nn.lstm_sequence(tape, net.lstm, xs)
    pooled = nn.mean_rows(tape, hs)
    z1 = nn.add(tape, nn.matmul(tape, pooled, net.w1), net.b1)
    a1 = nn.activation(tape, "relu", z1)
    q_action = nn.add(tape, nn.matmul(tape, a1, heads.w_act), heads.b_act)
    q_object = nn.add(tape, nn.matmul(tape, a1, heads.w_obj), heads.b_obj)
    return Trace(pooled, a1, q_action, q_object, tape)


def forward_q(net: LstmDqnNet, token_ids, game_id: str | None = None,
              tape: nn.Tape | None = None) -> tuple[nn.Tensor, nn.Tensor]:
    """Q-values over actions and objects for one token sequence."""
    trace = forward_trace(net, token_ids, game_id, tape)
    return trace.q_action, trace.q_object


def select_command(q_action: np.ndarray, q_object: np.ndarray, epsilon: float,
                   rng: np.random.Generator) -> tuple[int, int]:
    """Epsilon-greedy over the averaged pair value (argmax of each head)."""
    if not 0 <= epsilon <= 1:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(len(q_action))), int(rng.integers(len(q_object)))
    return int(np.argmax(q_action)), int(np.argmax(q_object))


def td_target(reward: float, done: bool, q_next_max: float, gamma: float) -> float:
    """r, or r + gamma * max command value at the next state."""
    if not 0 <= gamma < 1:
        raise ValueError(f"gamma must be in [0, 1), got {gamma}")
    return reward if done else reward + gamma * q_next_max


def pair_max(q_action: np.ndarray, q_object: np.ndarray) -> float:
    """Best averaged (action, object) command value."""
    return (float(np.max(q_action)) + float(np.max(q_object))) / 2.0


@dataclass
class Transition:
    state_tokens: np.ndarray
    action_index: int
    object_index: int
    reward: float
    next_state_tokens: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._cursor = 0

    def push(self, item: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._cursor] = item
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if len(self._items) < batch_size:
            raise ValueError(f"buffer holds {len(self._items)} < batch of {batch_size}")
        idx = rng.integers(len(self._items), size=batch_size)
        return [self._items[i] for i in idx]

    def __len__(self) -> int:
        return len(self._items)


def train_step(net: LstmDqnNet, target_net: LstmDqnNet, buffer: ReplayBuffer,
               hp: HyperParams, rng: np.random.Generator,
               game_id: str | None = None, target_cache: dict | None = None) -> float:
    """One minibatch TD update; returns the batch loss.

    `target_cache` memoizes target-net command values per observation; it is
    exact as long as the caller clears it on every target sync.
    """
    batch = buffer.sample(hp.batch_size, rng)
    tape = nn.Tape()
    losses = []
    for tr in batch:
        if tr.done:
            y = tr.reward
        else:
            key = (game_id, tr.next_state_tokens.tobytes()) if target_cache is not None else None
            q_next = target_cache.get(key) if key is not None else None
            if q_next is None:
                qa2, qo2 = forward_q(target_net, tr.next_state_tokens, game_id)
                q_next = pair_max(qa2.values, qo2.values)
                if key is not None:
                    target_cache[key] = q_next
            y = td_target(tr.reward, tr.done, q_next, hp.gamma)
        qa, qo = forward_q(net, tr.state_tokens, game_id, tape=tape)
        losses.append(nn.squared_td_loss(tape, qa, tr.action_index, y))
        losses.append(nn.squared_td_loss(tape, qo, tr.object_index, y))
    loss = nn.scale(tape, nn.total(tape, losses), 1.0 / hp.batch_size)
    tape.backward(loss)
    nn.sgd_update(net.parameters(), hp.lr, hp.clip_norm)
    return float(loss.values)


def sync_target(net: LstmDqnNet, target_net: LstmDqnNet) -> None:
    """Copy all parameter values into the target net."""
    for src, dst in zip(net.parameters(), target_net.parameters()):
        if src.values.shape != dst.values.shape:
            raise ValueError(f"target mismatch for {src.name}: {src.values.shape} vs {dst.values.shape}")
        dst.values[...] = src.values


def epsilon_at(step: int, hp: HyperParams, budget: int) -> float:
    anneal = hp.anneal_steps if hp.anneal_steps is not None else max(1, budget // 3)
    frac = min(1.0, step / anneal) if anneal > 0 else 1.0
    return hp.epsilon_start + (hp.epsilon_end - hp.epsilon_start) * frac


def evaluate(net: LstmDqnNet, spec: GameSpec, episodes: int, seed: int,
             epsilon: float = 0.05, episode_cap: int = env_mod.DEFAULT_EPISODE_CAP,
             game_id: str | None = None) -> tuple[float, float]:
    """(average episode reward, quest completion fraction) under the near-greedy policy."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    total_reward = 0.0
    completed = 0
    for _ in range(episodes):
        state, obs = env_mod.reset(spec, rng=rng)
        done = False
        while not done:
            tokens = net.encode(obs.text)
            qa, qo = forward_q(net, tokens, game_id)
            ai, oi = select_command(qa.values, qo.values, epsilon, rng)
            cmd = Command(spec.action_words[ai], spec.object_words[oi])
            state, result = env_mod.step(state, spec, cmd, episode_cap)
            total_reward += result.reward
            obs = result.observation
            done = result.done
        completed += int(result.quest_completed)
    return total_reward / episodes, completed / episodes


def sweep_all_starts(select_fn, spec: GameSpec, seed: int = 0,
                     episode_cap: int = env_mod.DEFAULT_EPISODE_CAP) -> tuple[float, float]:
    """Greedy evaluation over every (room, quest) start.

    `select_fn(state, observation) -> Command`. Returns the same metric pair
    as `evaluate`, averaging over all starts.
    """
    total_reward = 0.0
    completed = 0
    starts = [(room, q.quest_id) for q in spec.quests for room in spec.rooms]
    for i, start in enumerate(starts):
        state, obs = env_mod.reset(spec, seed=seed + i, start=start)
        done = False
        while not done:
            cmd = select_fn(state, obs)
            state, result = env_mod.step(state, spec, cmd, episode_cap)
            total_reward += result.reward
            obs = result.observation
            done = result.done
        completed += int(result.quest_completed)
    return total_reward / len(starts), completed / len(starts)


@dataclass
class LogRow:
    step: int
    game_id: str
    avg_reward: float
    quest_completion: float
    epsilon: float
    loss: float


@dataclass
class TrainResult:
    net: LstmDqnNet
    log: list[LogRow] = field(default_factory=list)


def train_q_loop(specs: list[GameSpec], net: LstmDqnNet, hp: HyperParams,
                 seed: int, budget_steps: int) -> TrainResult:
    """Shared Q-learning loop: the game rotates round-robin every episode,
    each game keeps its own replay buffer, one update per env step once warm."""
    env_rng = substream(seed, "env")
    explore_rng = substream(seed, "explore")
    replay_rng = substream(seed, "replay")
    eval_rng = substream(seed, "eval")

    buffers = {spec.game_id: ReplayBuffer(hp.replay_capacity) for spec in specs}
    target_net = net.copy()
    target_cache: dict = {}
    log: list[LogRow] = []
    env_steps = 0
    train_steps = 0
    last_loss = 0.0
    next_eval = hp.eval_interval
    game_cursor = 0

    def run_evals():
        nonlocal last_loss
        for spec in specs:
            eval_seed = int(eval_rng.integers(2 ** 63))
            avg_reward, completion = evaluate(
                net, spec, hp.eval_episodes, eval_seed,
                epsilon=hp.eval_epsilon, episode_cap=hp.episode_cap,
                game_id=spec.game_id)
            log.append(LogRow(env_steps, spec.game_id, avg_reward, completion,
                              epsilon_at(env_steps, hp, budget_steps), last_loss))

    while env_steps < budget_steps:
        spec = specs[game_cursor % len(specs)]
        game_cursor += 1
        buffer = buffers[spec.game_id]
        state, obs = env_mod.reset(spec, rng=env_rng)
        tokens = net.encode(obs.text)
        done = False
        while not done and env_steps < budget_steps:
            eps = epsilon_at(env_steps, hp, budget_steps)
            qa, qo = forward_q(net, tokens, spec.game_id)
            ai, oi = select_command(qa.values, qo.values, eps, explore_rng)
            cmd = Command(spec.action_words[ai], spec.object_words[oi])
            state, result = env_mod.step(state, spec, cmd, hp.episode_cap)
            next_tokens = net.encode(result.observation.text)
            buffer.push(Transition(tokens, ai, oi, result.reward, next_tokens, result.done))
            tokens = next_tokens
            done = result.done
            env_steps += 1

            if len(buffer) >= max(hp.warmup, hp.batch_size):
                last_loss = train_step(net, target_net, buffer, hp, replay_rng,
                                       spec.game_id, target_cache)
                train_steps += 1
                if (hp.target_sync is not None and math.isfinite(hp.target_sync)
                        and train_steps % int(hp.target_sync) == 0):
                    sync_target(net, target_net)
                    target_cache.clear()

            if env_steps >= next_eval:
                run_evals()
                next_eval += hp.eval_interval

    if budget_steps > 0 and (not log or log[-1].step < env_steps):
        run_evals()
    return TrainResult(net, log)


def train_teacher(spec: GameSpec, hp: HyperParams, seed: int,
                  budget_steps: int) -> TrainResult:
    """Train a single-game expert from scratch."""
    net = build_teacher_net(spec, hp, seed)
    return train_q_loop([spec], net, hp, seed, budget_steps)
